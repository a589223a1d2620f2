"""Both shipped experiments end to end, about 35 s each on one core."""

import tempfile

from astfraud.experiment import load_config, render_human, run_experiment

for name in ("experiment1", "experiment2"):
    cfg = load_config(name).with_overrides(output_dir=tempfile.mkdtemp(prefix=name + "-"))
    report = run_experiment(cfg, write=True)
    print(render_human(report))
    print(f"artifacts in {cfg.output_dir}\n")
