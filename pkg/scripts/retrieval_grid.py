"""Run the granularity x key-strategy x k retrieval grid and print it as one table.

    python scripts/retrieval_grid.py --config configs/retrieval_grid.json
    python scripts/retrieval_grid.py --config configs/retrieval_grid.json --stub \
        --dataset tests/fixtures/tiny_dataset.jsonl --output-dir runs/grid_smoke

With real endpoints this needs the released S-split data and credentials in
the environment (see the README). ``--stub`` swaps in the offline providers
so the grid machinery can be exercised on the fixtures.
"""

import argparse
import sys

from longmem.config import RunConfig
from longmem.pipeline import build_providers, cmd_run


def table(summary: dict, cfg: RunConfig) -> str:
    ks = sorted(set(cfg.grid.get("k") or [cfg.retrieval.k]))
    cols = [f"{m}@{k}" for k in ks for m in ("recall", "ndcg")] + ["accuracy"]
    rows = []
    for g in cfg.grid.get("granularity") or [cfg.index.granularity]:
        for ks_name in cfg.grid.get("key_strategy") or [cfg.index.key_strategy]:
            vals = []
            for c in cols:
                # recall@k / ndcg@k come from the cell run at that k; accuracy from the largest k
                k = int(c.split("@")[1]) if "@" in c else ks[-1]
                v = summary[f"{g}-{ks_name}-k{k}"]["overall"].get(c)
                vals.append("-" if v is None else f"{v:.3f}")
            rows.append([g, ks_name] + vals)
    head = ["granularity", "key"] + cols
    widths = [max(len(r[i]) for r in rows + [head]) for i in range(len(head))]
    fmt = lambda r: "  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows])


def ordering_holds(summary: dict, cfg: RunConfig, base="value_only", expanded="value_plus_fact") -> list[str]:
    problems = []
    for g in cfg.grid.get("granularity") or [cfg.index.granularity]:
        for k in cfg.grid.get("k") or [cfg.retrieval.k]:
            a = summary[f"{g}-{base}-k{k}"]["overall"][f"recall@{k}"]
            b = summary[f"{g}-{expanded}-k{k}"]["overall"][f"recall@{k}"]
            mark = "ok" if b >= a else "VIOLATED"
            print(f"{g:8s} recall@{k:<3d} {base} {a:.3f}  {expanded} {b:.3f}  {mark}")
            if b < a:
                problems.append(f"{g}/k={k}")
    return problems


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", required=True)
    ap.add_argument("--dataset")
    ap.add_argument("--output-dir")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--stub", action="store_true", help="offline providers")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)

    cfg = RunConfig.load(args.config)
    over = {"dataset_path": args.dataset, "output_dir": args.output_dir, "workers": args.workers}
    if args.dataset:
        over["dataset_format"] = "native"
    cfg = cfg.with_overrides(**over)
    if not cfg.grid:
        print("config has no grid", file=sys.stderr)
        return 2
    summary = cmd_run(cfg, build_providers(cfg, stub=args.stub), args.force)
    print(table(summary, cfg))
    print()
    bad = ordering_holds(summary, cfg)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
