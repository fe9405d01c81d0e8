import os
import shutil
import subprocess

import pytest
from matplotlib.collections import PolyCollection

from lqr_lab_viz.figures import FigureSpec, build_dp_lattice, build_running_avg, render
from lqr_lab_viz.schema import SchemaError, read_rows

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture(name):
    return os.path.join(FIXTURES, name)


class TestSchema:
    def test_reads_versioned_file(self):
        rows = read_rows(fixture("simulate.csv"), ("policy", "step"))
        assert rows and rows[0]["policy"]

    def test_rejects_wrong_version(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("# switched-lqr-lab v2\npolicy,step\nx,0\n")
        with pytest.raises(SchemaError):
            read_rows(str(bad), ("policy",))

    def test_rejects_missing_columns(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("# switched-lqr-lab v1\npolicy,step\nx,0\n")
        with pytest.raises(SchemaError):
            read_rows(str(bad), ("steady_cost",))


class TestRunningAvg:
    def test_renders_with_ci_bands(self, tmp_path):
        out = tmp_path / "running.png"
        spec = FigureSpec(inputs=[fixture("simulate.csv")], kind="running_avg",
                          output=str(out))
        fig = render(spec)
        assert out.exists() and out.stat().st_size > 1000
        bands = [a for a in fig.axes[0].collections if isinstance(a, PolyCollection)]
        assert bands, "confidence bands missing"

    def test_policy_filter(self, tmp_path):
        out = tmp_path / "running.png"
        spec = FigureSpec(inputs=[fixture("simulate.csv")], kind="running_avg",
                          output=str(out), policies=["per-opt"])
        fig = render(spec)
        labels = [t.get_text() for t in fig.axes[0].get_legend().get_texts()]
        assert labels == ["per-opt"]


class TestSweep:
    def test_renders_with_bands(self, tmp_path):
        out = tmp_path / "sweep.png"
        fig = render(FigureSpec(inputs=[fixture("sweep.csv")], kind="sweep",
                                output=str(out)))
        assert out.exists() and out.stat().st_size > 1000
        bands = [a for a in fig.axes[0].collections if isinstance(a, PolyCollection)]
        assert bands


class TestNormalizedDiff:
    def test_renders_non_gaussian_rows(self, tmp_path):
        out = tmp_path / "diff.png"
        fig = render(FigureSpec(inputs=[fixture("sweep.csv")], kind="normalized_diff",
                                output=str(out)))
        assert out.exists()
        bands = [a for a in fig.axes[0].collections if isinstance(a, PolyCollection)]
        assert bands

    def test_single_noise_file_is_an_error(self, tmp_path):
        single = tmp_path / "single.csv"
        with open(fixture("sweep.csv")) as fh:
            lines = fh.readlines()
        kept = [lines[0], lines[1]] + [ln for ln in lines[2:] if ",gaussian," in ln]
        single.write_text("".join(kept))
        with pytest.raises(ValueError, match="noise kinds"):
            render(FigureSpec(inputs=[str(single)], kind="normalized_diff",
                              output=str(tmp_path / "x.png")))


class TestDpLattice:
    def test_marks_infeasible_branches_in_red(self, tmp_path):
        out = tmp_path / "lattice.png"
        fig = render(FigureSpec(inputs=[fixture("dp_tables.csv")], kind="dp_lattice",
                                output=str(out)))
        assert out.exists()
        ax = fig.axes[0]
        colors = {t.arrow_patch.get_edgecolor() for t in ax.texts
                  if getattr(t, "arrow_patch", None) is not None}
        reds = [c for c in colors if c[:3] == (1.0, 0.0, 0.0)]
        assert reds, "infeasible transitions must be drawn distinctly in red"


class TestDeterminism:
    def test_reprojection_is_byte_identical(self, tmp_path):
        one, two = tmp_path / "one.png", tmp_path / "two.png"
        for out in (one, two):
            render(FigureSpec(inputs=[fixture("simulate.csv")], kind="running_avg",
                              output=str(out)))
        assert one.read_bytes() == two.read_bytes()


class TestEndToEnd:
    @pytest.mark.skipif(shutil.which("switched-lqr-lab") is None,
                        reason="primary CLI not on PATH")
    def test_consumes_fresh_primary_output(self, tmp_path):
        subprocess.run(["switched-lqr-lab", "simulate", "--horizon", "25", "--runs", "4",
                        "--policies", "per-opt,per-imp", "--seed", "2",
                        "--out", str(tmp_path)], check=True, capture_output=True)
        out = tmp_path / "fig.png"
        render(FigureSpec(inputs=[str(tmp_path / "simulate.csv")], kind="running_avg",
                          output=str(out)))
        assert out.exists() and out.stat().st_size > 1000
