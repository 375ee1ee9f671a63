"""Macro F1 of per-AU LDA and SVM as the synthetic class separation grows.

Weaker features stand in for a weaker CNN embedding; the sweep shows how
much the linear classifiers depend on feature quality.

    python3 scripts/separation_sweep.py --separations 0 0.5 1 2 4
"""
import argparse

import numpy as np

from aupipe.dataset import AU_IDS, apply_standardizer, fit_standardizer
from aupipe.evaluation import AuResult
from aupipe.linear_models import SvmTrainConfig, decision_value, fit_au
from aupipe.synth import SyntheticSpec, generate


def macro_f1(kind, train, test, seed):
    f1s = []
    for au in AU_IDS:
        model = fit_au(kind, train, au, SvmTrainConfig(max_epochs=300), seed)
        pred = decision_value(model, test.features) >= 0
        f1s.append(AuResult.from_predictions(pred, test.labels(au)).f1)
    return float(np.mean(f1s))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--separations", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--subjects", type=int, default=12)
    ap.add_argument("--frames", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"{'sep':>5} {'LDA':>7} {'SVM':>7}")
    for sep in args.separations:
        ds = generate(SyntheticSpec(n_subjects=args.subjects, frames_per_subject=args.frames,
                                    feature_dim=args.dim, class_separation=sep, seed=args.seed))
        ids = ds.subject_ids
        cut = 2 * len(ids) // 3
        train, test = ds.for_subjects(ids[:cut]), ds.for_subjects(ids[cut:])
        std = fit_standardizer(train.features)
        train = train.with_features(apply_standardizer(std, train.features))
        test = test.with_features(apply_standardizer(std, test.features))
        row = [macro_f1(k, train, test, args.seed) for k in ("lda", "svm")]
        print(f"{sep:5.2f} {row[0]:7.4f} {row[1]:7.4f}")


if __name__ == "__main__":
    main()
