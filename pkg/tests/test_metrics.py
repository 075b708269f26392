import numpy as np
import pytest

from rmagg import figures
from rmagg.data import Dataset
from rmagg.metrics import (
    EvalTriple,
    MetricsError,
    SweepTable,
    evaluate,
    load_table,
    save_table,
    sweep,
    table_from_dict,
    table_to_dict,
    to_csv,
    to_markdown,
)
from rmagg.rm_codes import Verdict


class ScriptedModel:
    def __init__(self, verdicts):
        self.verdicts = list(verdicts)

    def predict(self, inputs):
        return self.verdicts[: len(inputs)]


def toy_dataset(labels):
    labels = np.asarray(labels)
    return Dataset(
        inputs=np.zeros((len(labels), 2)),
        labels=labels,
        num_classes=int(labels.max()) + 1,
        name="toy",
    )


def sample_table() -> SweepTable:
    return SweepTable(
        axis="ec",
        rows=(
            (0.0, EvalTriple.from_counts(18, 1, 1)),
            (1.0, EvalTriple.from_counts(19, 1, 0)),
        ),
        meta={"model": "demo", "dataset": "toy"},
    )


class TestTriple:
    def test_sum_must_be_100(self):
        with pytest.raises(MetricsError):
            EvalTriple(50.0, 10.0, 10.0)
        with pytest.raises(MetricsError):
            EvalTriple(101.0, 0.0, -1.0)
        EvalTriple(100.0 - 2e-7, 0.0, 0.0)  # inside the tolerance

    def test_from_counts(self):
        t = EvalTriple.from_counts(18, 1, 1)
        assert (t.correct, t.rejected, t.incorrect) == (90.0, 5.0, 5.0)
        with pytest.raises(MetricsError):
            EvalTriple.from_counts(0, 0, 0)


class TestEvaluate:
    def test_oracle_scores_clean_sweep(self):
        ds = toy_dataset([0, 1, 2, 1])
        model = ScriptedModel([Verdict.exact(int(y)) for y in ds.labels])
        assert evaluate(model, ds) == EvalTriple(100.0, 0.0, 0.0)

    def test_always_reject(self):
        ds = toy_dataset([0, 1])
        model = ScriptedModel([Verdict.reject()] * 2)
        assert evaluate(model, ds) == EvalTriple(0.0, 100.0, 0.0)

    def test_always_wrong(self):
        ds = toy_dataset([0, 1])
        model = ScriptedModel([Verdict.exact(3), Verdict.exact(3)])
        assert evaluate(model, ds) == EvalTriple(0.0, 0.0, 100.0)

    def test_mixture_fractions(self):
        ds = toy_dataset([0, 0, 0, 0])
        model = ScriptedModel(
            [Verdict.exact(0), Verdict.corrected(0, 1), Verdict.reject(), Verdict.exact(2)]
        )
        assert evaluate(model, ds) == EvalTriple(50.0, 25.0, 25.0)

    def test_empty_dataset_rejected(self):
        ds = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), num_classes=2, name="e")
        with pytest.raises(MetricsError):
            evaluate(ScriptedModel([]), ds)


class TestSweepTable:
    def test_axis_name_checked(self):
        with pytest.raises(MetricsError):
            SweepTable(axis="gamma", rows=((0.0, EvalTriple(100, 0, 0)),), meta={})

    def test_rows_must_strictly_increase(self):
        t = EvalTriple(100, 0, 0)
        with pytest.raises(MetricsError):
            SweepTable(axis="tau", rows=((0.5, t), (0.5, t)), meta={})
        with pytest.raises(MetricsError):
            SweepTable(axis="tau", rows=((0.9, t), (0.5, t)), meta={})

    def test_accessors(self):
        table = sample_table()
        assert table.values() == [0.0, 1.0]
        assert table.triples()[1].correct == 95.0

    def test_single_value_sweep_is_single_row(self):
        ds = toy_dataset([0, 1])
        model = ScriptedModel([Verdict.exact(0), Verdict.exact(1)])
        table = sweep(lambda v: model, "epsilon", [0.3], ds)
        assert len(table.rows) == 1
        assert table.values() == [0.3]

    def test_sweep_calls_configure_per_value(self):
        ds = toy_dataset([0, 1])
        models = {
            0.0: ScriptedModel([Verdict.reject()] * 2),
            1.0: ScriptedModel([Verdict.exact(0), Verdict.exact(1)]),
        }
        table = sweep(lambda v: models[v], "ec", [0, 1], ds, meta={"model": "stub"})
        assert table.triples()[0] == EvalTriple(0.0, 100.0, 0.0)
        assert table.triples()[1] == EvalTriple(100.0, 0.0, 0.0)
        assert table.meta == {"model": "stub"}


class TestRendering:
    def test_csv_golden(self):
        want = (
            "ec,correct,rejected,incorrect\n"
            "0,90.00,5.00,5.00\n"
            "1,95.00,5.00,0.00\n"
        )
        assert to_csv(sample_table()) == want

    def test_markdown_golden(self):
        want = (
            "| ec | correct | rejected | incorrect |\n"
            "| -- | ------- | -------- | --------- |\n"
            "|  0 |   90.00 |     5.00 |      5.00 |\n"
            "|  1 |   95.00 |     5.00 |      0.00 |\n"
        )
        assert to_markdown(sample_table()) == want

    def test_fractional_axis_values_keep_precision(self):
        table = SweepTable(
            axis="tau", rows=((0.5, EvalTriple(100, 0, 0)),), meta={}
        )
        assert to_csv(table).splitlines()[1].startswith("0.5,")


class TestPersistence:
    def test_json_roundtrip(self, tmp_path):
        table = sample_table()
        paths = save_table(table, tmp_path / "demo")
        assert sorted(p.suffix for p in paths) == [".csv", ".json", ".md"]
        assert load_table(tmp_path / "demo.json") == table

    def test_dict_roundtrip_validates(self):
        raw = table_to_dict(sample_table())
        assert table_from_dict(raw) == sample_table()
        raw["axis"] = "nonsense"
        with pytest.raises(MetricsError):
            table_from_dict(raw)

    def test_csv_and_markdown_written_alongside(self, tmp_path):
        save_table(sample_table(), tmp_path / "demo")
        assert (tmp_path / "demo.csv").read_text() == to_csv(sample_table())
        assert (tmp_path / "demo.md").read_text() == to_markdown(sample_table())


class TestFigure:
    def test_render_writes_png(self, tmp_path):
        out = figures.render_sweep(sample_table(), tmp_path / "sweep.png")
        blob = out.read_bytes()
        assert blob[:8] == b"\x89PNG\r\n\x1a\n"
        assert len(blob) > 1000
