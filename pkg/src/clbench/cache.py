"""On-disk memoization of run reports, keyed by the config fingerprint.

Runs are deterministic for a given (config, seed), so a finished report can
be reused across processes. Set CL_CACHE_DIR to enable (or pass a directory
explicitly); delete the directory to invalidate.
"""

import json
import os

from .training import RunReport, run_experiment


def cache_dir():
    return os.environ.get("CL_CACHE_DIR")


def cached_run(config, dataset=None, data_dir=None, directory=None, verbose=False):
    d = directory or cache_dir()
    if not d:
        return run_experiment(config, dataset=dataset, data_dir=data_dir, verbose=verbose)
    cfg = config.validated()
    os.makedirs(d, exist_ok=True)
    path = os.path.join(d, cfg.fingerprint() + ".json")
    if os.path.exists(path):
        with open(path) as f:
            return RunReport(**json.load(f))
    report = run_experiment(cfg, dataset=dataset, data_dir=data_dir, verbose=verbose)
    tmp = path + f".tmp{os.getpid()}"
    with open(tmp, "w") as f:
        json.dump(report.to_dict(), f)
    os.replace(tmp, path)
    return report
