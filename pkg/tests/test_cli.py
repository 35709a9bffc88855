import json

from click.testing import CliRunner

from conftest import make_capture
from propmorph import imaging
from propmorph.cli import analyze, pipeline


def write_capture_files(tmp_path, cap=None):
    cap = cap or make_capture()
    (tmp_path / "rgb.png").write_bytes(imaging.save_rgb_png(cap.rgb))
    (tmp_path / "depth.png").write_bytes(imaging.save_depth_png(cap.depth))
    (tmp_path / "k.json").write_bytes(imaging.save_intrinsics_json(cap.intrinsics))
    return tmp_path


class TestPipelineCli:
    def test_run_stub_exits_0_on_anchored(self, tmp_path):
        write_capture_files(tmp_path)
        out = tmp_path / "store"
        result = CliRunner().invoke(
            pipeline,
            ["run", "--rgb", str(tmp_path / "rgb.png"), "--depth", str(tmp_path / "depth.png"),
             "--intrinsics", str(tmp_path / "k.json"), "--prompt", "a cute transformer toy",
             "--seed", "3", "--backend", "stub", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert "Anchored" in result.output
        assert (out / "sessions").exists()

    def test_run_with_fault_injection_exits_2(self, tmp_path):
        write_capture_files(tmp_path)
        result = CliRunner().invoke(
            pipeline,
            ["run", "--rgb", str(tmp_path / "rgb.png"), "--depth", str(tmp_path / "depth.png"),
             "--intrinsics", str(tmp_path / "k.json"), "--prompt", "casper",
             "--inject-residual", "--out", str(tmp_path / "store")],
        )
        assert result.exit_code == 2, result.output
        assert "BackgroundRemoved" in result.output

    def test_resume_completes_partial_session(self, tmp_path):
        from propmorph.pipeline import Engine

        write_capture_files(tmp_path)
        out = tmp_path / "store"
        engine = Engine(out)
        sid = engine.create_session(make_capture(), "astronaut")
        engine.advance(sid)
        del engine

        result = CliRunner().invoke(pipeline, ["resume", "--id", sid, "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert "Anchored" in result.output

    def test_resume_unknown_id_fails(self, tmp_path):
        (tmp_path / "store" / "sessions").mkdir(parents=True)
        result = CliRunner().invoke(pipeline, ["resume", "--id", "missing", "--out", str(tmp_path / "store")])
        assert result.exit_code != 0


class TestAnalyzeCli:
    def test_default_fixture_table(self):
        result = CliRunner().invoke(analyze, [])
        assert result.exit_code == 0
        assert "group" in result.output
        assert "all" in result.output

    def test_group_b_json(self):
        result = CliRunner().invoke(analyze, ["--group", "B", "--json"])
        assert result.exit_code == 0
        body = json.loads(result.output)
        assert body["n"] == 8
        assert abs(body["mean"] - 4.1) <= 0.1

    def test_custom_records_file(self, tmp_path):
        f = tmp_path / "r.csv"
        f.write_text(
            "participant,attempt,prompt,rating,group\n"
            "p1,1,alpha,6,A\np1,2,beta,4,B\np1,3,gamma,5,A\n"
        )
        result = CliRunner().invoke(analyze, ["--records", str(f), "--group", "A", "--json"])
        assert result.exit_code == 0
        body = json.loads(result.output)
        assert body == {"group": "A", "n": 2, "mean": 5.5, "stddev": 0.5}
