"""LSA attack success as a function of the poisoning ratio beta.

Every run shares the same clean data and training seed; only beta changes.

    python3 scripts/poison_budget_sweep.py --out runs/beta --betas 0.005 0.01 0.02 0.05 0.1
"""
import argparse
import dataclasses
from pathlib import Path

from bdfd.experiment import desk_suite, run_experiment, write_json


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/beta")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--betas", type=float, nargs="+", default=[0.005, 0.01, 0.02, 0.05, 0.1])
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=400)
    args = p.parse_args()

    base = desk_suite(args.out, args.seed, args.n_train, args.n_test)["lsa"]
    rows = []
    for beta in args.betas:
        spec = dataclasses.replace(base, out_dir=str(Path(args.out) / f"beta_{beta:g}"),
                                   poison=dataclasses.replace(base.poison, beta=beta))
        r = run_experiment(spec)
        rows.append({"beta": beta, "lsa_asr": r["lsa_asr"], "ls_poisoned": r["ls_poisoned"],
                     "ap_benign": r["ap_benign"]})
        print(f"beta={beta:<6g} ASR={r['lsa_asr']:.3f} LS={r['ls_poisoned']:.2f}px "
              f"AP={r['ap_benign']:.3f}", flush=True)
    write_json(Path(args.out) / "sweep.json", {"rows": rows})


if __name__ == "__main__":
    main()
