"""Python surface of the DisP laboratory.

The heavy lifting lives in the `_dispcore` extension; this wrapper accepts
configs as dicts or JSON text and returns parsed JSON artifacts.
"""

import json as _json

try:
    from . import _dispcore as _core
except ImportError:  # in-tree builds put the extension on PYTHONPATH directly
    import _dispcore as _core

ConfigError = _core.ConfigError
DataError = _core.DataError
NumericError = _core.NumericError

conditional_entropy_p_given_t = _core.conditional_entropy_p_given_t
mi_pt = _core.mi_pt
mi_pz = _core.mi_pz
printed_marginal_gap = _core.printed_marginal_gap
estimate_b = _core.estimate_b
r_batch = _core.r_batch
r_mem = _core.r_mem
l2_normalize = _core.l2_normalize


def _config_text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def config_hash(config):
    return _core.config_hash(_config_text(config))


def build_dataset(config, out):
    """Build the biased dataset; returns the dataset directory."""
    return _core.build_dataset(_config_text(config), str(out))


def train(config, out):
    """Run the seeded training repeats; returns the parsed summary."""
    summary_path = _core.train(_config_text(config), str(out))
    with open(summary_path) as handle:
        return _json.load(handle)


def attack(config, features, out_dir):
    """Run the unsupervised + supervised attacks; returns the parsed report."""
    report_path = _core.attack(_config_text(config), str(features), str(out_dir))
    with open(report_path) as handle:
        return _json.load(handle)


def analyze(config, out):
    """Emit the closed-form MI grids (and the ablation table when configured)."""
    return _core.analyze(_config_text(config), str(out))
