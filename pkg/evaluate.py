# python evaluate.py 로 모든 이론 실험을 기본 설정으로 실행
# 결과는 results/<experiment>.tsv 로 저장

"""Runs every theory experiment with its default grid and writes one TSV report per experiment"""
from __future__ import annotations

import os
import logging

from sng_dbscan.synthetic import BallMixtureSpec, LevelSetScenario, TheoryScenario
from sng_dbscan.theory_lab import (
    core_identification_experiment,
    karger_threshold_experiment,
    levelset_experiment,
    mincut_scaling_experiment,
    minpts_window_report,
    recovery_experiment,
)
from sng_dbscan.utils import _setup_logger

_setup_logger()

logger = logging.getLogger("main")

SEED = int(os.environ.get("SNG_SEED", "0"))

EXPERIMENT_LIST = {
    "window": lambda: minpts_window_report(
        TheoryScenario.noisy_three_balls(), eps=0.8, s=0.1, n=5000
    ),
    "corepoints": lambda: core_identification_experiment(
        TheoryScenario.noisy_three_balls(), eps=0.8, s=0.1, n=5000, seeds=range(SEED, SEED + 5)
    ),
    "mincut": lambda: mincut_scaling_experiment(
        TheoryScenario.unit_disk(), eps=0.4, seeds=range(SEED, SEED + 5)
    ),
    "karger_complete": lambda: karger_threshold_experiment("complete", seed=SEED),
    "karger_ball": lambda: karger_threshold_experiment("ball", seed=SEED),
    "recovery": lambda: recovery_experiment(
        BallMixtureSpec.three_balls(), seeds=range(SEED, SEED + 10)
    ),
    "levelset": lambda: levelset_experiment(
        LevelSetScenario.default(), seeds=range(SEED, SEED + 5)
    ),
}

output_folder = os.environ.get("SNG_RESULTS", "results")
os.makedirs(output_folder, exist_ok=True)

for name, run in EXPERIMENT_LIST.items():
    try:
        logger.info(f"Running experiment: {name}")
        report = run()
        report.write(os.path.join(output_folder, f"{name}.tsv"))
        for failure in report.failures:
            logger.warning(f"{name}: {failure}")
    except Exception as ex:
        print(ex)
