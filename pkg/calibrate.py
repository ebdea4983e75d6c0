"""Calibration run: trains every strategy at the default spec and prints
suite precisions, localization rates, and cadence degradation. Not part of
the deliverable test suite; used to freeze golden values."""

import json
import time
from dataclasses import replace

import numpy as np

from cuetrack.metrics import evaluate
from cuetrack.synthetic import (
    STRATEGIES,
    SyntheticSpec,
    eval_suite_specs,
    localization_rates,
    run_tracker,
    train_guidance,
)

SPEC = SyntheticSpec()
EPOCHS = 5
STEPS = 300
SUITE = 200


def suite_metrics(strategy, weights, cadence=1):
    pairs = []
    for s in eval_suite_specs(SPEC, size=SUITE):
        pairs.extend(run_tracker(s, strategy, weights, cadence).pairs())
    return evaluate(pairs)


def main():
    results = {}
    trained = {}
    for strategy in STRATEGIES:
        t0 = time.time()
        res = train_guidance(SPEC, strategy, epochs=EPOCHS, lr=2e-3, seed=0,
                             steps_per_epoch=STEPS)
        t1 = time.time()
        trained[strategy] = res
        print(f"[train {strategy}] {t1-t0:.1f}s curve={['%.4f' % x for x in res.train_curve]} "
              f"val={['%.4f' % x for x in res.val_curve]} best={res.best_epoch}", flush=True)
        t0 = time.time()
        rep = suite_metrics(strategy, res.weights)
        t1 = time.time()
        print(f"[suite {strategy}] {t1-t0:.1f}s precision={rep.precision:.4f} "
              f"auc={rep.auc:.4f} normP={rep.norm_precision:.4f}", flush=True)
        results[strategy] = dict(precision=rep.precision, auc=rep.auc,
                                 norm_precision=rep.norm_precision)

    t0 = time.time()
    rep4 = suite_metrics("refined_heatmap", trained["refined_heatmap"].weights, cadence=4)
    print(f"[cadence 4] {time.time()-t0:.1f}s precision={rep4.precision:.4f} "
          f"drop={results['refined_heatmap']['precision'] - rep4.precision:.4f}", flush=True)
    results["refined_cadence4"] = dict(precision=rep4.precision)

    t0 = time.time()
    r_rate, n_rate = localization_rates(SPEC, size=SUITE)
    print(f"[localization] {time.time()-t0:.1f}s refined={r_rate:.4f} naive={n_rate:.4f}", flush=True)
    results["localization"] = dict(refined=r_rate, naive=n_rate)
    results["train_curves"] = {s: trained[s].train_curve for s in STRATEGIES}
    results["val_curves"] = {s: trained[s].val_curve for s in STRATEGIES}

    with open("calibration.json", "w") as f:
        json.dump(results, f, indent=2, sort_keys=True)
    print("ordering:",
          results["refined_heatmap"]["precision"], ">=",
          results["naive_map"]["precision"], ">=",
          results["direct_text"]["precision"], ">=",
          results["no_text"]["precision"], flush=True)


if __name__ == "__main__":
    main()
