"""Golden free-energy values generated from the oracles.

The fixture is a CSV file whose first line records its provenance,
``# oracle=... tolerance=... generator=<sha256 of oracles.py>``, followed by
``mass,f0,f1`` rows. A companion ``.sha256`` file holds the checksum of the
CSV so that hand edits are detected.
"""
import hashlib
import inspect
import sys
from pathlib import Path

import numpy as np

from . import oracles

FIXTURE_DIR = Path(__file__).parent / "fixtures"
GOLDEN_FILE = FIXTURE_DIR / "goldens.csv"
GOLDEN_MASSES = (0.01, 0.03, 0.1, 0.3, 1.0)


class OracleSelfCheckError(RuntimeError):
    pass


def generator_hash():
    return hashlib.sha256(inspect.getsource(oracles).encode()).hexdigest()


def oracle_self_check():
    """Cross-check the momentum integrals against brute force and a large torus."""
    for m in (0.5, 1.0):
        brute = -oracles.brute_force_logZ(2, m) / 4
        torus = oracles.exact_f0_torus(2, m)
        if abs(brute - torus) > 1e-12 * abs(brute):
            raise OracleSelfCheckError(f"2x2 torus f0 mismatch at m={m}: {brute} vs {torus}")
        brute1 = oracles.brute_force_df(2, m) / 4
        torus1 = oracles.exact_f1_torus(2, m)
        if abs(brute1 - torus1) > 1e-12 * abs(brute1):
            raise OracleSelfCheckError(f"2x2 torus f1 mismatch at m={m}: {brute1} vs {torus1}")
    big = oracles.exact_f0_torus(64, 1.0)
    if abs(big - oracles.exact_f0(1.0)) > 1e-10:
        raise OracleSelfCheckError("infinite-lattice f0 disagrees with the 64x64 torus at m=1")


def golden_text(masses=GOLDEN_MASSES):
    lines = [f"# oracle=continuum_trg.oracles.exact_f0,exact_f1 tolerance={oracles.QUAD_TOL:g} "
             f"generator={generator_hash()}",
             "mass,f0,f1"]
    for m in masses:
        lines.append(f"{m!r},{oracles.exact_f0(m):.17g},{oracles.exact_f1(m):.17g}")
    return "\n".join(lines) + "\n"


def checksum(text):
    return hashlib.sha256(text.encode()).hexdigest()


def regenerate_goldens(path=GOLDEN_FILE, masses=GOLDEN_MASSES):
    """Write the golden CSV and its checksum; returns the CSV path."""
    oracle_self_check()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = golden_text(masses)
    path.write_text(text, encoding="utf-8", newline="\n")
    Path(str(path) + ".sha256").write_text(checksum(text) + "\n", encoding="utf-8", newline="\n")
    return path


def load_goldens(path=GOLDEN_FILE, verify=True):
    """Rows ``(mass, f0, f1)``; raises ``ValueError`` when the checksum does not match."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if verify:
        expected = Path(str(path) + ".sha256").read_text(encoding="utf-8").strip()
        if checksum(text) != expected:
            raise ValueError(f"checksum mismatch for {path}")
    lines = text.splitlines()
    if not lines[0].startswith("# oracle=") or "tolerance=" not in lines[0]:
        raise ValueError("golden file lacks a provenance header")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:] if ln])
    return rows


def main(argv=None):
    try:
        p = regenerate_goldens()
    except OracleSelfCheckError as exc:
        print(f"oracle self-check failed: {exc}", file=sys.stderr)
        return 1
    print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
