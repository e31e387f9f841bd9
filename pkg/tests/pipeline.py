"""Runs every CLI command once at a tiny scale; shared by the CLI and acceptance tests."""
import yaml

from nashvalue.cli import DEFAULT_CONFIG, main

SCALE = "0.001"


def small_config(directory):
    raw = yaml.safe_load(DEFAULT_CONFIG.read_text())
    raw["toy"].update(pretrain_iters=100, refine_iters=100, collocation_batch=64)
    path = directory / "small.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run_pipeline(out, config, seed=7):
    common = ["--config", str(config), "--scale", SCALE, "--seed", str(seed), "--out", str(out)]
    steps = [
        ["generate-data", *common],
        ["generate-data", "--split", "test", *common],
        ["train", *common],
        ["evaluate", *common],
        ["evaluate", "--oracle", *common],
        ["simulate", *common],
        ["simulate", "--belief", "0.2,0.8", "--true-types", "na,a", *common],
        ["toy-demo", *common],
    ]
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited with {code}")
    return out


def csv_files(root):
    return sorted(p.relative_to(root) for p in root.rglob("*.csv"))
