#!/usr/bin/env python3
"""Conjugate points and Morse indices along a great circle.

Scans a unit-speed geodesic of the round sphere (stereographic chart) and
prints the conjugate instants, then cross-checks the Morse index by the
counting and spectral routes for a few arc lengths.
"""

import numpy as np

import fbt
from fbt.geoflow import integrate_geodesic
from fbt.metric import PhaseState


def main():
    sphere = fbt.sphere_stereo(1.0)
    path = integrate_geodesic(sphere, PhaseState([0.0, -1.0], [1.0, 0.0]), 3.2)
    rep = fbt.conjugate_scan(path)
    print("conjugate instants over (0, 3.2]:")
    for inst in rep.instants:
        print(f"  t = {inst.t:.12f}  multiplicity {inst.multiplicity}"
              f"  (pi = {np.pi:.12f})")

    for tau in (0.8 * np.pi, 1.5 * np.pi, 2.5 * np.pi):
        path = integrate_geodesic(sphere, PhaseState([0.0, -1.0], [1.0, 0.0]), tau)
        idx = fbt.cross_check(path)
        print(f"tau = {tau:.4f}: m- = {idx.m_minus}, m0 = {idx.m_zero}, "
              f"routes agree: {idx.agree}")


if __name__ == "__main__":
    main()
