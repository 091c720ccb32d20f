"""
Benchmark trends on synthetic phantoms (slow; run with --runslow).

200 train / 50 val / 60 test phantoms per seed, three seeds. Checks the
ordering weak-only < full subset <= WSSL, that text guidance does not hurt the
student, and that a text-guided teacher segments the weak set at least as
well as a pure segmentation teacher.
"""

from pathlib import Path
from statistics import mean

import pytest

from models.phantom_models import PhantomConfig
from models.training_models import ExperimentConfig
from services import wssl_pipeline as pipeline
from services.phantom_service import assign_supervision, generate_dataset, MANIFEST_FILE

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)
N_TRAIN, N_VAL, N_TEST = 200, 50, 60
N_TOTAL = N_TRAIN + N_VAL + N_TEST
EPOCHS = 20
TOLERANCE = 0.005


def benchmark_config(dataset_dir: str, run_dir: str, seed: int, alpha: float = None,
                     lambda_: float = None) -> ExperimentConfig:
    data = ExperimentConfig().model_dump()
    data.update(name=f"bench-{seed}", dataset_dir=dataset_dir, run_dir=run_dir, seed=seed, full_fraction=0.3)
    data["text"]["dim"] = 64
    for stage in ("teacher", "student"):
        data[stage].update(seed=seed, epochs=EPOCHS)
    if alpha is not None:
        data["student"]["loss"]["alpha"] = alpha
    if lambda_ is not None:
        data["teacher"]["loss"]["lambda_"] = lambda_
    return ExperimentConfig(**data)


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """Per seed: test AUC of every model and weak-set Dice of both teachers"""
    root = tmp_path_factory.mktemp("benchmark")
    ratios = (N_TRAIN / N_TOTAL, N_VAL / N_TOTAL, N_TEST / N_TOTAL)
    results = {}
    for seed in SEEDS:
        dataset = root / f"data_{seed}"
        manifest = generate_dataset(PhantomConfig(seed=seed), N_TOTAL, ratios, seed, str(dataset))
        assign_supervision(manifest, 0.3, seed).write(Path(dataset) / MANIFEST_FILE)

        def config(name, **kw):
            return benchmark_config(str(dataset), str(root / f"{name}_{seed}"), seed, **kw)

        wssl = pipeline.run_wssl(config("wssl"))
        # same teacher and pseudo masks, text loss off
        no_text_cfg = config("no_text", alpha=0.0).model_copy(
            update={"pseudo_dir": str(Path(wssl.run_dir) / pipeline.PSEUDO_DIR)})
        no_text = pipeline.run_wssl(no_text_cfg)
        weak_only = pipeline.run_baseline(config("weak_only"), "weak-only")
        full_30 = pipeline.run_baseline(config("full_30"), "full-30")

        seg_cfg = config("seg_teacher", lambda_=0.0)
        ctx = pipeline.open_run(seg_cfg)
        try:
            seg_teacher = pipeline.analyze_teacher(ctx, pipeline.train_teacher(ctx).checkpoint)
        finally:
            ctx.close()

        results[seed] = {
            "auc": {name: outcome.reports["test"].auc for name, outcome in
                    (("wssl", wssl), ("no_text", no_text), ("weak_only", weak_only), ("full_30", full_30))},
            "teacher_dice": {"text": wssl.teacher["dice_overall"], "seg": seg_teacher["dice_overall"]},
        }
    return results


class TestDetectionTrend:
    def test_ordering_of_mean_auc(self, benchmark):
        means = {name: mean(benchmark[s]["auc"][name] for s in SEEDS)
                 for name in ("wssl", "no_text", "weak_only", "full_30")}
        assert means["weak_only"] < means["full_30"] <= means["wssl"]

    def test_text_guidance_does_not_hurt(self, benchmark):
        with_text = mean(benchmark[s]["auc"]["wssl"] for s in SEEDS)
        without = mean(benchmark[s]["auc"]["no_text"] for s in SEEDS)
        assert with_text >= without - TOLERANCE


class TestTeacherTrend:
    def test_text_guided_teacher_dice(self, benchmark):
        text = [benchmark[s]["teacher_dice"]["text"] for s in SEEDS]
        seg = [benchmark[s]["teacher_dice"]["seg"] for s in SEEDS]
        assert mean(text) >= mean(seg) - TOLERANCE
        assert sum(t > s for t, s in zip(text, seg)) >= 2
