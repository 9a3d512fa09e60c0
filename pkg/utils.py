"""
CPS Testbed Utility Functions
Shared helpers for seeded randomness, deterministic serialization,
checksums and human-readable reports.
"""

import hashlib
import json
import zlib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

# Significant digits for every float written to a dataset file
FLOAT_DIGITS = 9
FLOAT_FORMAT = f"%.{FLOAT_DIGITS}g"


class TestbedError(Exception):
    """Base class for every error raised by the testbed."""

    __test__ = False


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """
    Named sub-stream of the scenario seed.

    Args:
        seed: Scenario seed
        name: Stream name, e.g. "noise" or "planning"

    Returns:
        numpy Generator independent of every other named stream
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def round_sig(value: float) -> float:
    """Round to the dataset's significant-digit precision."""
    return float(FLOAT_FORMAT % value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return round_sig(value)
    return value


def write_jsonl(path: Path, kind: str, fields: Sequence[str], rows: Iterable[Dict[str, Any]]) -> int:
    """
    Write a JSON-lines file whose first line is a header naming the field order.

    Returns:
        Number of data lines written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"format": kind, "fields": list(fields)}) + "\n")
        for row in rows:
            fh.write(json.dumps({name: _jsonable(row[name]) for name in fields}) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    """Read a file written by write_jsonl, skipping the header line."""
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    return [json.loads(line) for line in lines[1:]]


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class VisualizationUtils:
    """Utilities for plots and text reports."""

    @staticmethod
    def plot_step_response(t: Sequence[float], simulated: Sequence[float],
                           analytic: Sequence[float], title: str,
                           output_path: Optional[Path] = None):
        """Plot a simulated concentration curve against its closed form."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(10, 6))
        ax.plot(t, simulated, label="RK4 simulation", color="#2d6a4f", linewidth=2)
        ax.plot(t, analytic, label="Closed form", color="#dc3545", linestyle="--")
        ax.set_xlabel("Time (min)")
        ax.set_ylabel("C_A (mol/m³)")
        ax.set_title(title)
        ax.legend()
        ax.grid(True)
        fig.tight_layout()
        if output_path is not None:
            fig.savefig(output_path, dpi=120)
        plt.close(fig)
        return output_path

    @staticmethod
    def plot_disturbance_estimate(t: Sequence[float], estimate: Sequence[float],
                                  actual: float, output_path: Optional[Path] = None):
        """Plot the inlet concentration recovered from outlet measurements."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(10, 4))
        ax.plot(t, estimate, label="Estimated C_A0", color="#52b788", linewidth=2)
        ax.axhline(actual, label="Injected C_A0", color="#ffc107", linestyle=":")
        ax.set_xlabel("Time since step (min)")
        ax.set_ylabel("C_A0 (mol/m³)")
        ax.set_title("Disturbance Estimation")
        ax.legend()
        ax.grid(True)
        fig.tight_layout()
        if output_path is not None:
            fig.savefig(output_path, dpi=120)
        plt.close(fig)
        return output_path

    @staticmethod
    def generate_report(name: str, checks: Dict[str, Dict[str, Any]],
                        balance: Dict[str, Dict[str, Any]]) -> str:
        """Generate the dataset quality report printed by `validate` and `report`."""
        lines = [
            "",
            f"CPS Security Dataset Report: {name}",
            "=" * (30 + len(name)),
            "",
            "QUALITY CHECKS",
            "--------------",
        ]
        for check, result in checks.items():
            mark = "PASS" if result["ok"] else "FAIL"
            lines.append(f"{mark}  {check}")
            for problem in result.get("problems", [])[:10]:
                lines.append(f"      - {problem}")

        for view, stats in balance.items():
            total = stats["records"]
            lines += [
                "",
                f"CLASS BALANCE ({view})",
                "-" * (16 + len(view)),
                f"Records: {total:,}",
                f"Attack fraction: {stats['attack_fraction'] * 100:.1f}%",
            ]
            for label, count in stats["label_counts"].items():
                share = count / total * 100 if total else 0.0
                lines.append(f"  {label}: {count:,} ({share:.1f}%)")
            for attack_id, minutes in stats["attack_durations"].items():
                lines.append(f"  attack {attack_id}: {minutes:.1f} min")

        return "\n".join(lines) + "\n"
