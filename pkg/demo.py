"""
CPS Testbed Demo: reactor, control loop and security dataset
Showcasing the testbed end to end on small scenarios
"""

import logging
import tempfile
from pathlib import Path

import numpy as np

from cli import run_scenario, scenario_view, validate_and_report
from config import DisturbanceEvent, IrregularEvent
from dataset import estimate_disturbance_series, load_view
from netsim import IrregularKind
from oracle import DetectorVariant, classify_records, decision_table, matrix_rows
from plant import PlantParams, analytic_response, integrate, steady_state
import scenarios
from utils import VisualizationUtils

logging.basicConfig(level=logging.WARNING)


def demonstrate_step_response(out_dir: Path, delta: float = 1.0):
    """Open-loop step in C_A0 against the first-order closed form."""
    print("\n🧪 Open-loop step response...")
    params = PlantParams()
    state = steady_state(params, 0.925)
    state = state.model_copy(update={"c_a0": 0.925 + delta})
    steps = int(round(0.1 / params.dt))

    t, simulated, analytic = [0.0], [state.c_a], [state.c_a]
    c_init = state.c_a
    for k in range(1, 31):
        state = integrate(state, params.F, params, steps)
        t.append(round(k * 0.1, 9))
        simulated.append(state.c_a)
        analytic.append(c_init + analytic_response(params, delta, t[-1]))

    error = float(np.max(np.abs(np.array(simulated) - np.array(analytic))))
    print(f"K_p = {params.gain:.3f}, tau = {params.tau:.3f} min")
    print(f"Max deviation from closed form: {error:.2e}")
    path = VisualizationUtils.plot_step_response(t, simulated, analytic, "Step in C_A0",
                                                 out_dir / "step_response.png")
    print(f"📊 Plot saved as: {path}")
    return error


def demonstrate_closed_loop(out_dir: Path):
    """Baseline loop written to disk and validated."""
    print("\n🏭 Closed-loop baseline run...")
    run_dir = out_dir / "baseline"
    manifest = run_scenario(scenarios.baseline(duration=6.0), run_dir)
    ok, report, _ = validate_and_report(run_dir)
    print(report)
    print("✅ Dataset valid" if ok else "❌ Dataset failed validation")
    print(f"Records: train {manifest.views['train'].records:,}, test {manifest.views['test'].records:,}")
    return run_dir


def demonstrate_disturbance_estimate(out_dir: Path):
    """Recover an inlet step from outlet readings with the loop held in MANUAL."""
    print("\n🔎 Disturbance estimation...")
    cfg = scenarios.baseline(duration=4.0).model_copy(update={
        "name": "disturbance",
        "disturbances": [DisturbanceEvent(at=1.0, c_a0=1.425)],
        "irregular": [IrregularEvent(at=0.5, kind=IrregularKind.MODE_SWITCH_TRAFFIC, value=1.0)],
    })
    run_dir = out_dir / "disturbance"
    run_scenario(cfg, run_dir)
    records = load_view(run_dir, "train")
    step_index = int(np.searchsorted(records["t"].to_numpy(), 1.0))
    estimates = estimate_disturbance_series(records, step_index, 0.925, cfg.plant)
    tail = estimates.dropna()
    print(f"Injected C_A0 = 1.425, last estimate = {tail.iloc[-1]:.4f}")
    t_since = records["t"].iloc[step_index + 1:] - records["t"].iloc[step_index]
    path = VisualizationUtils.plot_disturbance_estimate(t_since.tolist(), tail.tolist(), 1.425,
                                                        out_dir / "disturbance_estimate.png")
    print(f"📊 Plot saved as: {path}")


def demonstrate_trace_classification(out_dir: Path):
    """One scenario per verdict quadrant."""
    print("\n🧭 Trace classification quadrants...")
    cases = {
        "normal": scenarios.quadrant_normal(),
        "failure": scenarios.quadrant_failure(),
        "attack": scenarios.quadrant_attack(),
        "attack-or-failure": scenarios.quadrant_attack_or_failure(),
    }
    for name, cfg in cases.items():
        run_dir = out_dir / f"quadrant-{name}"
        run_scenario(cfg, run_dir)
        view = scenario_view(run_dir)
        verdicts = classify_records(view.physical, view.plant, view.controller)
        counts = verdicts["verdict"].value_counts().to_dict()
        print(f"  {name}: {counts}")


def demonstrate_ids_matrix(out_dir: Path):
    """Physical, network and host detectors on the console trio."""
    print("\n🛡️ IDS decision matrix...")
    views = {}
    for name, cfg in scenarios.console_trio().items():
        run_dir = out_dir / f"console-{name}"
        run_scenario(cfg, run_dir)
        views[name] = scenario_view(run_dir)
    rows = matrix_rows(decision_table(views))
    print("          " + "  ".join(f"{v.value:>12}" for v in DetectorVariant))
    for label, row in zip(("Normal", "Attack"), rows):
        print(f"  {label:<8}" + "  ".join(f"{cell:>12}" for cell in row))
    return rows


def main():
    """Main demonstration function."""
    print("🏭 CPS Testbed - DEMO MODE")
    print("=" * 60)
    out_dir = Path(tempfile.mkdtemp(prefix="testbed-demo-"))
    print(f"📁 Output directory: {out_dir}")

    demonstrate_step_response(out_dir)
    demonstrate_closed_loop(out_dir)
    demonstrate_disturbance_estimate(out_dir)
    demonstrate_trace_classification(out_dir)
    demonstrate_ids_matrix(out_dir)

    print("\n🎉 Demonstration completed successfully!")
    print("\n🚀 Next Steps:")
    print("   1. Write a scenario file (see README)")
    print("   2. python cli.py run my_scenario.toml --out out/my_scenario")
    print("   3. python cli.py validate out/my_scenario")


if __name__ == "__main__":
    main()
