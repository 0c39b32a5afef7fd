"""Smoke test for the oseen_spectral extension.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math
import os
import tempfile

import oseen_spectral as osp


def main():
    mesh = osp.Mesh.square(10)
    assert (mesh.n_vertices, mesh.n_cells) == (121, 200), mesh
    assert mesh.dof("mini") == 764 and mesh.dof("th") == 1004
    assert abs(mesh.h_max - 2 * math.sqrt(2) / 10) < 1e-14

    pairs = osp.solve(osp.Mesh.square(20), nev=4)
    first = pairs[0][0]
    assert abs(first.real - 13.78) / 13.78 < 5e-3, pairs
    assert all(res <= 1e-9 for _, res in pairs)

    stokes = osp.solve(mesh, beta=(0.0, 0.0), nev=3)
    assert all(abs(lam.imag) <= 1e-9 for lam, _ in stokes)

    dual = osp.solve(mesh, nev=2, dual=True)
    primal = osp.solve(mesh, nev=2)
    assert all(abs(a[0] - b[0].conjugate()) < 1e-8 * abs(a[0]) for a, b in zip(primal, dual))

    rep = osp.estimate(mesh, "eta")
    assert abs(rep["eta2"] - (rep["R"] + rep["D"] + rep["J"])) <= 1e-12 * rep["eta2"]
    assert len(rep["per_cell"]) == mesh.n_cells

    hs = [2 * math.sqrt(2) / n for n in (20, 30, 40, 50)]
    fit = osp.fit_rate(hs, [13.7800, 13.6826, 13.6498, 13.6350])
    assert abs(fit["alpha"] - 2.15) <= 0.05 and abs(fit["lambda_extr"] - 13.6107) < 2e-3, fit
    try:
        osp.fit_rate(hs[:2], [1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("two samples must be rejected")

    refined = osp.Mesh.lshape(2).refine([0, 1], bisections=2)
    refined.conformity_audit()
    assert osp.Mesh.parse(refined.to_text()).n_cells == refined.n_cells

    study = osp.uniform_study([osp.Mesh.square(n) for n in (4, 6, 8)], nev=1)
    assert len(study["rows"]) == 3 and study["rows"][-1]["err"] < study["rows"][0]["err"]

    with tempfile.TemporaryDirectory() as out:
        code = osp.run_cli(["solve", "--n", "8", "--nev", "2", "--out", out])
        assert code == 0
        with open(os.path.join(out, "eigenvalues.json")) as f:
            assert len(json.load(f)["eigenvalues"]) == 2
        assert osp.run_cli(["solve", "--domain", os.path.join(out, "missing.mesh")]) == 2

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
