"""Figure rendering from pipeline CSVs: golden inputs, schema errors, read-only."""

import hashlib
import json
import pathlib

import pytest

from render import FigureSpec, SpecError, load_columns, main, render

GOLDEN = pathlib.Path(__file__).parent / "golden"
GOLDEN_INPUTS = {
    "fig1": GOLDEN / "fig1_values.csv",
    "fig2": GOLDEN / "fig2_diff.csv",
    "fig3": GOLDEN / "fig3_diff.csv",
    "fig4": GOLDEN / "fig4_convergence.csv",
}


def spec_for(figure, tmp_path, **extra):
    return FigureSpec(
        input=str(GOLDEN_INPUTS[figure]),
        figure=figure,
        output=str(tmp_path / f"{figure}.png"),
        **extra,
    )


class TestGoldenRendering:
    @pytest.mark.parametrize("figure", ["fig1", "fig2", "fig3", "fig4"])
    def test_renders_image(self, figure, tmp_path):
        out = render(spec_for(figure, tmp_path))
        assert pathlib.Path(out).stat().st_size > 0

    def test_fig4_prints_negative_slopes(self, tmp_path, capsys):
        render(spec_for("fig4", tmp_path))
        lines = [l for l in capsys.readouterr().out.splitlines() if "regression slope" in l]
        assert lines, "expected one printed slope per probe"
        slopes = [float(l.rsplit(":", 1)[1]) for l in lines]
        assert all(s < 0 for s in slopes)

    @pytest.mark.parametrize("figure", ["fig1", "fig2", "fig3", "fig4"])
    def test_inputs_stay_untouched(self, figure, tmp_path):
        path = GOLDEN_INPUTS[figure]
        before = hashlib.sha256(path.read_bytes()).hexdigest()
        render(spec_for(figure, tmp_path))
        assert hashlib.sha256(path.read_bytes()).hexdigest() == before

    def test_labels_override_defaults(self, tmp_path):
        spec = spec_for("fig1", tmp_path, xlabel="time", ylabel="wealth", title="curves")
        assert pathlib.Path(render(spec)).stat().st_size > 0


class TestSchemaErrors:
    def test_missing_column_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,V0,V1\n0.0,1.0,2.0\n", encoding="utf-8")
        with pytest.raises(SpecError, match="V2"):
            load_columns(str(bad), ("t", "V0", "V1", "V2"))

    def test_empty_table_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("t,V0,V1,V2\n", encoding="utf-8")
        with pytest.raises(SpecError, match="no data rows"):
            load_columns(str(empty), ("t", "V0", "V1", "V2"))

    def test_non_numeric_rejected(self, tmp_path):
        bad = tmp_path / "text.csv"
        bad.write_text("t,V0,V1,V2\n0.0,one,2.0,3.0\n", encoding="utf-8")
        with pytest.raises(SpecError, match="non-numeric"):
            load_columns(str(bad), ("t", "V0", "V1", "V2"))

    def test_unknown_figure_rejected(self):
        with pytest.raises(SpecError, match="unknown figure"):
            FigureSpec(input="x.csv", figure="fig9", output="x.png")

    def test_unknown_spec_key_rejected(self):
        with pytest.raises(SpecError, match="colors"):
            FigureSpec.from_json(json.dumps(
                {"input": "x.csv", "figure": "fig1", "output": "x.png", "colors": "red"}
            ))

    def test_missing_required_key_rejected(self):
        with pytest.raises(SpecError, match="output"):
            FigureSpec.from_json(json.dumps({"input": "x.csv", "figure": "fig1"}))


class TestCommandLine:
    def write_spec(self, tmp_path, data):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    def test_renders_from_spec_file(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path, {
            "input": str(GOLDEN_INPUTS["fig4"]),
            "figure": "fig4",
            "output": str(tmp_path / "fig4.png"),
        })
        assert main(["--spec", spec]) == 0
        out = capsys.readouterr().out
        assert "regression slope" in out and "wrote" in out

    def test_schema_mismatch_exits_2(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path, {
            "input": str(GOLDEN_INPUTS["fig1"]),
            "figure": "fig4",
            "output": str(tmp_path / "x.png"),
        })
        assert main(["--spec", spec]) == 2
        assert "spec error" in capsys.readouterr().err

    def test_empty_csv_exits_2(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("probe_inventory,n,log_rel_diff\n", encoding="utf-8")
        spec = self.write_spec(tmp_path, {
            "input": str(empty), "figure": "fig4", "output": str(tmp_path / "x.png"),
        })
        assert main(["--spec", spec]) == 2

    def test_missing_input_exits_3(self, tmp_path):
        spec = self.write_spec(tmp_path, {
            "input": str(tmp_path / "absent.csv"),
            "figure": "fig1",
            "output": str(tmp_path / "x.png"),
        })
        assert main(["--spec", spec]) == 3

    def test_missing_spec_file_exits_3(self, tmp_path):
        assert main(["--spec", str(tmp_path / "absent.json")]) == 3
