"""Sequential regression tasks with a weights-and-biases hypernet.

The hypernet (two hidden layers, trainable embeddings of size 2) generates
every weight and bias of a ReLU regression mainnet. Bad hypernet init shows
up as a huge loss at iteration 0 and often as outright divergence at usable
learning rates; a few seeds make the contrast visible.
"""

from dataclasses import replace

import numpy as np

from hyperinit.train import config_for, train

SEEDS = range(5)

print(f"{'scheme':<14}{'lr':>8}{'diverged':>10}{'mean init':>12}{'mean final':>12}")
for scheme, lrs in (("hyperfan-in", [1e-2]), ("hyperfan-out", [1e-3]),
                    ("fan-in", [1e-2, 1e-3, 1e-5])):
    for lr in lrs:
        inits, finals, diverged = [], [], 0
        for seed in SEEDS:
            cfg = replace(config_for("regression-seq"), seed=seed,
                          scheme=scheme, learning_rate=lr)
            res = train("regression-seq", cfg)
            if res.diverged or len(res.task_final_losses) < 3:
                diverged += 1
                continue
            inits.append(np.mean(res.task_init_losses))
            finals.append(np.mean(res.task_final_losses))
        mi = f"{np.mean(inits):12.3f}" if inits else f"{'-':>12}"
        mf = f"{np.mean(finals):12.4f}" if finals else f"{'-':>12}"
        print(f"{scheme:<14}{lr:>8g}{diverged:>7}/{len(SEEDS)}{mi}{mf}")
