"""Run the benign, FGA, LSA and low-budget LSA experiments and print a summary.

    python3 scripts/run_desk_suite.py --out runs/desk --seed 0
    python3 scripts/run_desk_suite.py --out runs/desk --only lsa --align
"""
import argparse
import logging
import time
from pathlib import Path

from bdfd.experiment import desk_suite, run_experiment, stage_align, write_json

SUMMARY_KEYS = ("ap_benign", "ap_trigger", "ls_benign", "ls_poisoned", "lsa_asr",
                "defense.flagged_rate_benign", "defense.flagged_rate_poisoned",
                "defense.flagged_rate_shifted", "defense.cross_check_fake_flag_rate")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=400)
    p.add_argument("--only", nargs="*", default=None, help="subset of experiment names")
    p.add_argument("--align", action="store_true", help="also write aligned crops of the test set")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    specs = desk_suite(args.out, args.seed, args.n_train, args.n_test)
    summary = {}
    for name, spec in specs.items():
        if args.only and name not in args.only:
            continue
        t0 = time.time()
        report = run_experiment(spec)
        summary[name] = {k: report.get(k) for k in SUMMARY_KEYS}
        summary[name]["seconds"] = round(time.time() - t0, 1)
        if args.align:
            test_dir = "test_triggered" if spec.poison else "test"
            al = stage_align(Path(spec.out_dir) / "model.bdfd", Path(spec.out_dir) / test_dir,
                             Path(spec.out_dir) / "aligned")
            summary[name]["alignment.mean_error"] = al["alignment.mean_error"]
            summary[name]["alignment.mean_true_error"] = al["alignment.mean_true_error"]
        print(name, {k: v for k, v in summary[name].items() if v is not None}, flush=True)
    write_json(Path(args.out) / "summary.json", summary)


if __name__ == "__main__":
    main()
