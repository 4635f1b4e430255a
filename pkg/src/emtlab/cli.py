"""Command-line entry points.

    emtlab generate          build a problem-set file for one shift level
    emtlab train             train the controller from a JSON config
    emtlab evaluate          run a checkpoint deterministically on a dataset
    emtlab ablate            evaluate with one component substituted
    emtlab export-attention  dump per-generation routing score matrices
    emtlab compare           paired comparison of two results files
"""

import argparse
import json
import os

from . import benchmarks, harness, ppo
from .nn.params import load_checkpoint
from .seeds import derive_seed


def _cmd_generate(args):
    level = benchmarks.SHIFT_LEVELS[args.level]
    instances = benchmarks.generate_awcci(level, args.seed, args.tasks, args.dim)
    if args.limit is not None:
        instances = instances[:args.limit]
    benchmarks.save_instances(instances, args.out)
    print(f"wrote {len(instances)} instances to {args.out}")


def load_train_config(path):
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("dataset", "seed"):
        if key not in doc:
            raise ValueError(f"train config missing required key: {key}")
    ppo_keys = {f for f in ppo.PPOConfig.__dataclass_fields__}
    config = ppo.PPOConfig(**{k: v for k, v in doc.items() if k in ppo_keys})
    return doc, config


def _cmd_train(args):
    doc, config = load_train_config(args.config)
    instances = benchmarks.load_instances(doc["dataset"])
    if "n_tasks" in doc and doc["n_tasks"] != instances[0].n_tasks:
        raise ValueError(f"config n_tasks={doc['n_tasks']} but dataset has "
                         f"{instances[0].n_tasks}")
    if "dim" in doc and doc["dim"] != instances[0].sub_tasks[0].dim:
        raise ValueError(f"config dim={doc['dim']} but dataset has "
                         f"{instances[0].sub_tasks[0].dim}")
    os.makedirs(args.out, exist_ok=True)
    result = ppo.train(instances, config, doc["seed"],
                       pop_size=doc.get("pop_size", 50), out_dir=args.out)
    ppo.write_training_log(result.log, os.path.join(args.out, "training_log.csv"))
    print(f"trained {config.epochs} epochs over {len(instances)} instances; "
          f"outputs in {args.out}")


def _run_evaluation(args, variant):
    store = load_checkpoint(args.checkpoint)
    instances = benchmarks.load_instances(args.dataset)
    controller = harness.Controller(store, variant)
    rows, episodes = harness.evaluate(controller, instances, args.runs,
                                      args.seed, args.pop_size, args.budget,
                                      collect_trace=True)
    os.makedirs(args.out, exist_ok=True)
    harness.write_results_csv(rows, os.path.join(args.out, "results.csv"))
    paired = [(row.run_index, ep) for row, ep in zip(rows, episodes)]
    harness.write_trace_csv(paired, os.path.join(args.out, "trace.csv"))
    print(f"{variant}: mean perf {harness.mean_perf(rows):.4f} over "
          f"{len(rows)} runs; results in {args.out}")


def _cmd_evaluate(args):
    _run_evaluation(args, "full")


def _cmd_ablate(args):
    _run_evaluation(args, args.variant)


def _cmd_export_attention(args):
    store = load_checkpoint(args.checkpoint)
    instances = benchmarks.load_instances(args.instance)
    inst = instances[args.index]
    controller = harness.Controller(store, "full")
    ep_seed = derive_seed(args.seed, "eval", inst.instance_id, 0)
    ep = harness.run_episode(inst, controller, ep_seed, args.pop_size,
                             args.budget, collect_attention=True)
    harness.write_attention_csv(ep.attention, args.out)
    print(f"wrote {len(ep.attention)} generations of routing scores "
          f"for {inst.instance_id} to {args.out}")


def _cmd_compare(args):
    rows_a = harness.read_results_csv(args.a)
    rows_b = harness.read_results_csv(args.b)
    text = harness.compare_results(rows_a, rows_b, args.a, args.b)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")


def _add_eval_flags(p):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pop-size", type=int, default=50, dest="pop_size")
    p.add_argument("--budget", type=int, default=250)


def build_parser():
    parser = argparse.ArgumentParser(prog="emtlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a problem-set file")
    p.add_argument("--level", choices=sorted(benchmarks.SHIFT_LEVELS),
                   required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--tasks", type=int, default=10)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None,
                   help="keep only the first N instances")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train the controller")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    _add_eval_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="evaluate an ablation variant")
    p.add_argument("--variant", choices=harness.ABLATION_VARIANTS,
                   required=True)
    _add_eval_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-attention", help="dump routing score matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instance", required=True,
                   help="dataset file; --index picks the instance")
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pop-size", type=int, default=50, dest="pop_size")
    p.add_argument("--budget", type=int, default=250)
    p.set_defaults(func=_cmd_export_attention)

    p = sub.add_parser("compare", help="paired comparison of two results files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
