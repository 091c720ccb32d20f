"""
Command-line tests: exit codes, dataset generation, baselines, evaluation and plots
"""

import json
import shutil
from pathlib import Path

import pytest

from conftest import make_experiment
from main import main
from models.eval_models import EvalReport
from services.array_store import read_audit_log
from services.checkpoint_service import load_checkpoint, read_checkpoint_meta
from services.metrics_service import auc
from services.phantom_service import MANIFEST_FILE
from services.reporting import read_scores
from services.text_service import load_embedding_table

FIXTURE_RUN = Path(__file__).parent / "fixtures" / "tiny_run"


def write_config(tmp_path: Path, dataset_dir: str, **overrides) -> str:
    cfg = make_experiment(dataset_dir, str(tmp_path / "unused"), **overrides)
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(cfg.model_dump(mode="json", by_alias=True)))
    return str(path)


@pytest.fixture(scope="module")
def cli_run(tiny_dataset_dir, tmp_path_factory):
    """A run-wssl run directory produced through the CLI"""
    root = tmp_path_factory.mktemp("cli")
    config = write_config(root, tiny_dataset_dir)
    run_dir = root / "wssl"
    assert main(["run-wssl", "--config", config, "--out", str(run_dir)]) == 0
    return config, run_dir


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert main(["run-wssl", "--config", str(tmp_path / "missing.json")]) == 2

    def test_unknown_config_key(self, tmp_path, tiny_dataset_dir):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"dataset_dir": tiny_dataset_dir, "learning_rate": 1}))
        assert main(["run-wssl", "--config", str(path)]) == 2

    def test_invalid_flag_value(self, tmp_path, tiny_dataset_dir):
        config = write_config(tmp_path, tiny_dataset_dir)
        assert main(["run-wssl", "--config", config, "--full-fraction", "1.5", "--out", str(tmp_path / "r")]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert main(["evaluate", "--checkpoint", str(tmp_path / "checkpoints" / "student")]) == 2

    def test_unknown_baseline(self, tmp_path, tiny_dataset_dir):
        config = write_config(tmp_path, tiny_dataset_dir)
        assert main(["run-baseline", "--config", config, "--mode", "nope", "--out", str(tmp_path / "r")]) == 2

    def test_missing_dataset_is_io_error(self, tmp_path):
        config = write_config(tmp_path, str(tmp_path / "no_dataset"))
        assert main(["run-wssl", "--config", config, "--out", str(tmp_path / "r")]) == 3


class TestGenData:
    def test_rerun_gives_identical_manifest(self, tmp_path):
        phantom = tmp_path / "phantom.json"
        phantom.write_text(json.dumps({"volume_shape": [24, 24, 24], "organ_radius_range": [3.0, 4.0],
                                       "tumor_radius_range": [2.0, 3.0]}))
        for name in ("a", "b"):
            code = main(["gen-data", "--config", str(phantom), "--n", "20", "--seed", "9",
                         "--full-fraction", "0.3", "--out", str(tmp_path / name)])
            assert code == 0
        first = (tmp_path / "a" / MANIFEST_FILE).read_bytes()
        assert first == (tmp_path / "b" / MANIFEST_FILE).read_bytes()
        records = [json.loads(line) for line in first.decode().splitlines()[1:]]
        weak = [r for r in records if r["supervision"] == "weak"]
        assert weak and all(r["mask"] is None for r in weak)

    def test_bad_phantom_key(self, tmp_path):
        phantom = tmp_path / "phantom.json"
        phantom.write_text(json.dumps({"volume_size": [24, 24, 24]}))
        assert main(["gen-data", "--config", str(phantom), "--out", str(tmp_path / "x")]) == 2


class TestBaselines:
    def test_weak_only_never_reads_masks(self, tmp_path, tiny_dataset_dir):
        config = write_config(tmp_path, tiny_dataset_dir)
        run_dir = tmp_path / "weak"
        assert main(["run-baseline", "--config", config, "--mode", "weak-only", "--audit",
                     "--out", str(run_dir)]) == 0
        entries = read_audit_log(str(run_dir / "logs" / "audit.jsonl"))
        assert entries
        assert not [e for e in entries if e["path"].startswith("masks/")]

    def test_alpha_zero_matches_no_text_baseline(self, tmp_path, tiny_dataset_dir):
        config = write_config(tmp_path, tiny_dataset_dir)
        zero, no_text = tmp_path / "alpha0", tmp_path / "notext"
        assert main(["run-wssl", "--config", config, "--alpha", "0", "--out", str(zero)]) == 0
        assert main(["run-baseline", "--config", config, "--mode", "wssl-no-text", "--out", str(no_text)]) == 0
        assert (zero / "scores.json").read_text() == (no_text / "scores.json").read_text()
        hash_zero = read_checkpoint_meta(str(zero / "checkpoints" / "student")).state_hash
        hash_no_text = read_checkpoint_meta(str(no_text / "checkpoints" / "student")).state_hash
        assert hash_zero == hash_no_text

        meta = read_checkpoint_meta(str(no_text / "checkpoints" / "student"))
        assert not meta.network.heads.with_text
        report = json.loads((no_text / "report.json").read_text())
        for split in ("val", "test"):
            assert report[split]["text_det_auc"] is None
            assert report[split]["location_accuracy"] is None
            assert report[split]["auc"] is not None


class TestEvaluate:
    def test_reproduces_run_report(self, cli_run):
        _, run_dir = cli_run
        assert main(["evaluate", "--checkpoint", str(run_dir / "checkpoints" / "student"),
                     "--compare", str(run_dir / "scores.json")]) == 0
        report = json.loads((run_dir / "report.json").read_text())
        evaluation = json.loads((run_dir / "evaluation.json").read_text())
        for split in ("val", "test"):
            original, again = EvalReport(**report[split]), EvalReport(**evaluation[split])
            assert again.flat_metrics() == original.flat_metrics()
            assert again.roc_points == original.roc_points
            assert again.delong.p_value == 1.0

    def test_single_split(self, cli_run):
        _, run_dir = cli_run
        assert main(["evaluate", "--checkpoint", str(run_dir / "checkpoints" / "student"),
                     "--split", "test"]) == 0
        evaluation = json.loads((run_dir / "evaluation.json").read_text())
        assert "test" in evaluation and "val" not in evaluation


class TestCommittedRun:
    """A hand-built checkpoint whose metrics are known in closed form"""

    @pytest.fixture
    def run_dir(self, tmp_path):
        target = tmp_path / "tiny_run"
        shutil.copytree(FIXTURE_RUN, target)
        return target

    def test_checkpoint_loads_with_verified_hash(self):
        net, meta = load_checkpoint(str(FIXTURE_RUN / "checkpoints" / "student"))
        assert meta.network.heads.with_seg and meta.network.heads.with_det
        assert net.det_projector is None

    def test_evaluate_matches_committed_report(self, run_dir):
        assert main(["evaluate", "--checkpoint", str(run_dir / "checkpoints" / "student"),
                     "--dataset", str(run_dir / "dataset")]) == 0
        expected = json.loads((run_dir / "report.json").read_text())
        evaluation = json.loads((run_dir / "evaluation.json").read_text())
        for split in ("val", "test"):
            want, got = EvalReport(**expected[split]), EvalReport(**evaluation[split])
            assert got.n_cases == want.n_cases
            got_metrics = got.flat_metrics()
            for key, value in want.flat_metrics().items():
                if value is None:
                    assert got_metrics[key] is None, key
                else:
                    assert got_metrics[key] == pytest.approx(value, abs=1e-6), key
            assert len(got.roc_points) == len(want.roc_points)
            for point, reference in zip(got.roc_points, want.roc_points):
                assert point == pytest.approx(reference, abs=1e-6)


class TestPlot:
    def test_svg_annotation_matches_auc(self, cli_run, tmp_path):
        _, run_dir = cli_run
        out = tmp_path / "plots"
        assert main(["plot", "--scores", str(run_dir / "scores.json"), "--names", "wssl",
                     "--reports", str(run_dir / "report.json"), "--out", str(out)]) == 0
        expected = auc(read_scores(str(run_dir / "scores.json"))["test"])
        assert f"wssl (AUC = {expected:.6f})" in (out / "roc.svg").read_text()
        assert (out / "roc_wssl.csv").exists()
        assert (out / "table.csv").exists() and (out / "table.md").exists()

    def test_needs_inputs(self, tmp_path):
        assert main(["plot", "--out", str(tmp_path)]) == 2

    def test_names_must_match(self, cli_run, tmp_path):
        _, run_dir = cli_run
        assert main(["plot", "--scores", str(run_dir / "scores.json"), "--names", "a", "b",
                     "--out", str(tmp_path)]) == 2


class TestExportEmbeddings:
    def test_table_loads_back(self, tmp_path):
        path = tmp_path / "table.json"
        assert main(["export-embeddings", "--dim", "16", "--out", str(path)]) == 0
        table = load_embedding_table(str(path), expected_dim=16)
        assert len(table.rows) == 6
