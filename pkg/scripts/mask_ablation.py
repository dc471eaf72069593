"""Full model vs. full attention (no interaction mask), TV2M TransErr over several seeds.

One VAE is shared; each seed trains its own stage 2, then both stage-3
variants from that stage-2 checkpoint.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from egojoint import pipeline as pl, synth
from egojoint.config import ExperimentConfig, apply_overrides


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--root", required=True)
    p.add_argument("--templates", default=",".join(t for t in synth.TEMPLATE_KINDS if t != "stand-still"))
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--sampling-seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=2000)
    args = p.parse_args()

    root = Path(args.root)
    root.mkdir(parents=True, exist_ok=True)
    data = root / "data.egtw"
    synth.write_dataset(synth.generate_dataset(args.templates.split(","), args.count, 0, 0), data)
    base = ExperimentConfig(data=str(data))

    def cfg(stage, seed, extra=()):
        return apply_overrides(base, [f'stage="{stage}"', f"seed={seed}", f"optim.steps={args.steps}", *extra])

    vae = pl.run_stage1(cfg("vae", 0), root)
    results = {}
    for seed in (int(s) for s in args.seeds.split(",")):
        d = root / f"s{seed}"
        s2 = pl.run_stage2(cfg("t2m_pretrain", seed), vae, d)
        errs = {}
        for variant, extra in (("full", []), ("nomask", ["model.use_mask=false"])):
            pl.run_stage3(cfg("joint", seed, extra), s2, d / variant)
            errs[variant] = [pl.evaluate_run(d / variant, data, "tv2m", seed=s)["TransErr"]
                             for s in (int(x) for x in args.sampling_seeds.split(","))]
        results[seed] = errs
        print(seed, {k: round(float(np.mean(v)), 4) for k, v in errs.items()}, flush=True)
    (root / "ablation.json").write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
