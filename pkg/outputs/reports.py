import json
import platform
from pathlib import Path

import numpy as np
import pandas as pd

from common.errors import *

import logging
log = logging.getLogger('reports')

CSV_SCHEMA_VERSION = 1

METRICS_COLUMNS = [
    "env_step", "episodes", "updates", "status", "mean_return", "train_return",
    "wm_recon", "wm_reward", "wm_kl", "wm_total", "vae_recon", "vae_kl", "ensemble",
    "actor", "critic", "manager_actor", "manager_critic", "imag_return", "primitive",
]

ABLATION_COLUMNS = ["agent", "k", "v_target", "mean_return", "mean_abs_speed_error"]

SPEED_COLUMNS = ["v_target", "mean_return", "mean_abs_speed_error", "episodes"]

MAZE_COLUMNS = ["arena", "metric", "targets_or_success", "steps", "episodes"]

CSV_SCHEMA = {
    "version": CSV_SCHEMA_VERSION,
    "metrics": METRICS_COLUMNS,
    "ablation": ABLATION_COLUMNS,
    "speed_sweep": SPEED_COLUMNS,
    "maze_suite": MAZE_COLUMNS,
}

# Fixed float format so that identical runs give identical bytes
FLOAT_FORMAT = "%.10g"


def write_csv(rows, path, columns) -> Path:
    """Write rows (list of dicts or a data frame) with the given leading columns first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    leading = [c for c in columns if c in df.columns]
    rest = [c for c in df.columns if c not in columns]
    df = df.reindex(columns=leading + rest) if len(df.columns) else pd.DataFrame(columns=columns)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_metrics(rows, path) -> Path:
    return write_csv(pd.DataFrame(list(rows)).reindex(columns=METRICS_COLUMNS), path, METRICS_COLUMNS)


def read_csv_checked(path, required=()) -> pd.DataFrame:
    """Read a CSV. Malformed content raises ParseError with the offending line number."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"CSV file not found: {path}")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise ParseError(f"Empty CSV file {path}", line=1)
    except pd.errors.ParserError as e:
        raise ParseError(f"Malformed CSV file {path}: {e}", line=_line_from_message(str(e)))

    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ParseError(f"CSV file {path} lacks columns {missing}", line=1)
    for column in required:
        values = pd.to_numeric(df[column], errors="coerce")
        bad = values.isna() & df[column].notna()
        if bad.any():
            # Header is line 1
            raise ParseError(f"Non-numeric value in column '{column}' of {path}", line=int(np.argmax(bad.to_numpy())) + 2)
        df[column] = values
    return df


def _line_from_message(message: str):
    """Pandas reports 'Expected 2 fields in line 4, saw 3'."""
    words = message.replace(",", " ").split()
    for i, w in enumerate(words[:-1]):
        if w == "line" and words[i + 1].isdigit():
            return int(words[i + 1])
    return None


def write_manifest(out_dir, run_config: dict, extra: dict = None) -> Path:
    """Everything needed to reproduce the run: full configuration, schema version and library versions."""
    import tensorflow as tf

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": run_config,
        "csv_schema": CSV_SCHEMA,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "tensorflow": tf.__version__,
        },
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    return path


def read_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def update_manifest(out_dir, **changes) -> Path:
    path = Path(out_dir) / "manifest.json"
    manifest = read_manifest(out_dir) if path.is_file() else {}
    manifest.update(changes)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    return path
