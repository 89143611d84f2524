import json
import os

import pytest
from click.testing import CliRunner

from winseg.cli import main, run
from winseg.synthetic import generate_toy_dataset


@pytest.fixture(scope="module")
def cli_toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_toy")
    generate_toy_dataset(root, size=48, n_train=3, n_test_normal=2,
                         n_test_defect=2, defect_side=16, seed=5)
    return str(root)


def invoke(*args):
    runner = CliRunner()
    return runner.invoke(main, list(args), catch_exceptions=False)


class TestPrompts:
    def test_one_prompt_per_line(self):
        result = invoke("prompts", "--object", "bottle")
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert len(lines) == 154 + 88
        assert lines[0] == "a cropped photo of the bottle."

    def test_json_flag(self):
        result = invoke("prompts", "--object", "bottle", "--json")
        blob = json.loads(result.output)
        assert blob["n_normal"] == 154
        assert blob["n_anomaly"] == 88

    def test_lexicon_file(self, tmp_path):
        lex = tmp_path / "lex.json"
        lex.write_text(json.dumps({
            "normal_states": ["ok [o]"], "anomaly_states": ["broken [o]"],
            "templates": ["[c]"]}))
        result = invoke("prompts", "--object", "pump", "--lexicon", str(lex),
                        "--json")
        blob = json.loads(result.output)
        assert blob["normal"] == ["ok pump"]

    def test_out_file(self, tmp_path):
        out = tmp_path / "prompts.json"
        result = invoke("prompts", "--object", "x", "--out", str(out))
        assert result.exit_code == 0
        assert json.loads(out.read_text())["n_normal"] == 154


class TestScore:
    def test_score_json_and_heatmap(self, cli_toy, tmp_path):
        img = os.path.join(cli_toy, "widget", "test", "square", "000.png")
        heatmap = str(tmp_path / "heat.png")
        result = invoke("score", "--image", img, "--object", "widget",
                        "--heatmap", heatmap, "--tau", "0.05")
        assert result.exit_code == 0
        blob = json.loads(result.output)
        assert 0.0 <= blob["ascore"] <= 1.0
        assert blob["original_size"] == [48, 48]
        from PIL import Image

        with Image.open(heatmap) as handle:
            assert handle.size == (48, 48)

    def test_missing_image_is_usage_error(self):
        result = invoke("score", "--image", "/does/not/exist.png")
        assert result.exit_code == 2


class TestFewshot:
    def test_build_and_score(self, cli_toy, tmp_path):
        img = os.path.join(cli_toy, "widget", "test", "square", "001.png")
        saved = str(tmp_path / "memory.wctf")
        result = invoke("fewshot", "--root", cli_toy, "--category", "widget",
                        "--k", "1", "--seed", "0", "--save-memory", saved,
                        "--image", img, "--no-language", "--tau", "0.05")
        assert result.exit_code == 0
        blob = json.loads(result.output)
        assert blob["memory"]["bank_sizes"]["patch"] == 225
        assert len(blob["queries"]) == 1
        assert 0.0 <= blob["queries"][0]["ascore"] <= 1.0
        assert os.path.exists(saved)

    def test_load_saved_memory(self, cli_toy, tmp_path):
        saved = str(tmp_path / "m.wctf")
        invoke("fewshot", "--root", cli_toy, "--category", "widget",
               "--k", "1", "--save-memory", saved, "--no-language")
        img = os.path.join(cli_toy, "widget", "test", "good", "000.png")
        result = invoke("fewshot", "--memory", saved, "--image", img,
                        "--no-language")
        assert result.exit_code == 0
        blob = json.loads(result.output)
        assert blob["memory"]["k_shots"] == 1

    def test_refs_required(self, cli_toy):
        result = invoke("fewshot")
        assert result.exit_code == 2


class TestEval:
    def test_single_seed_zero_std(self, cli_toy, tmp_path):
        out_dir = str(tmp_path / "out")
        result = invoke("eval", "--root", cli_toy, "--shots", "0",
                        "--seeds", "1", "--out", out_dir, "--tau", "0.05")
        assert result.exit_code == 0
        blob = json.loads(result.output)
        table = blob["reports"]["0"]["categories"]["widget"]
        assert all(cell["std"] == 0.0 for cell in table.values())
        assert os.path.exists(os.path.join(out_dir, "report_shots0.csv"))

    def test_fewshot_eval(self, cli_toy):
        result = invoke("eval", "--root", cli_toy, "--shots", "1",
                        "--seeds", "0,1", "--no-language", "--tau", "0.05")
        blob = json.loads(result.output)
        agg = blob["reports"]["1"]["categories"]["widget"]["pauroc"]
        assert len(agg["per_seed"]) == 2


class TestBench:
    def test_two_configs(self):
        result = invoke("bench", "--configs", "windowed,patch_token",
                        "--images", "1", "--repeats", "1",
                        "--model", "reference:0")
        assert result.exit_code == 0
        blob = json.loads(result.output)
        assert [r["config"] for r in blob["rows"]] == ["windowed", "patch_token"]


class TestSynth:
    def test_generates_tree(self, tmp_path):
        out = str(tmp_path / "data")
        result = invoke("synth", "--out", out)
        assert result.exit_code == 0
        assert os.path.isdir(os.path.join(out, "widget", "train", "good"))


class TestErrorContract:
    def test_runtime_error_json_on_stderr(self, capsys, monkeypatch, tmp_path):
        bad = tmp_path / "corrupt.png"
        bad.write_bytes(b"not a png")
        monkeypatch.setattr("sys.argv",
                            ["winseg", "score", "--image", str(bad)])
        code = run()
        captured = capsys.readouterr()
        assert code == 1
        blob = json.loads(captured.err.strip())
        assert blob["error"]["type"] == "ServiceError"
        assert "decode" in blob["error"]["message"]

    def test_usage_error_exit_2(self, capsys, monkeypatch):
        monkeypatch.setattr("sys.argv", ["winseg", "nosuchcommand"])
        assert run() == 2

    def test_success_exit_0(self, capsys, monkeypatch):
        monkeypatch.setattr("sys.argv", ["winseg", "prompts", "--object", "x"])
        assert run() == 0
