"""Smoke test for the `ncell` extension module.

Build it first:

    cargo build --release -p ncell-py --features extension-module

The script copies the shared library next to a temporary `ncell.so` so no
packaging step is needed. Pass a path to use a different build.
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_ncell(lib_path):
    tmp = tempfile.mkdtemp(prefix="ncell-smoke-")
    shutil.copy(lib_path, os.path.join(tmp, "ncell.so"))
    sys.path.insert(0, tmp)
    import ncell

    return ncell, tmp


def main():
    lib = sys.argv[1] if len(sys.argv) > 1 else os.path.join(ROOT, "target", "release", "libncell.so")
    if not os.path.exists(lib):
        sys.exit(f"{lib} not found; build with `cargo build --release -p ncell-py --features extension-module`")
    ncell, tmp = import_ncell(lib)

    s = ncell.striatum(total_neurons=400, seed=1)
    c = s.compartment
    assert c.neuron_count == 400, c
    assert s.populations[s.stimulated_neuron] == "St4"
    print(c)

    spec = os.path.join(tmp, "striatum.toml")
    c.write(spec)
    assert ncell.validate_spec(spec) == []
    again = ncell.Compartment.load(spec)
    assert again.structure_digest() == c.structure_digest()

    cfg = s.demo_config(300.0)
    rec = ncell.simulate(c, cfg)
    v = ncell.average_trace(c, rec)
    assert len(v) == len(rec.times) == len(rec)
    driven = rec.trace(s.stimulated_neuron)
    assert max(driven) > 80.0, "stimulated neuron should spike"

    fs = 1000.0 / (rec.times[1] - rec.times[0])
    dom, freqs, power = ncell.analyze_spectrum(v, fs)
    r, n_active = ncell.radiality(c, rec, s.stimulated_neuron)
    print(f"dominant {dom:.1f} Hz, radiality r={r:.3f} over {n_active} neurons")

    tone = [math.sin(2 * math.pi * 50.0 * k / 2000.0) for k in range(4000)]
    dom, freqs, _ = ncell.analyze_spectrum(tone, 2000.0)
    assert abs(dom - 50.0) <= freqs[1] - freqs[0], dom

    try:
        ncell.analyze_spectrum([0.0, 1.0, 0.0], 2000.0)
    except ValueError as e:
        assert str(e).startswith("SignalTooShort"), e
    else:
        raise AssertionError("short signal accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
