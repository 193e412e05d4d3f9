"""Independent oracles, coded without the package's formulation machinery.

The dense power-flow oracle writes the network equations of the two-bus
fixture directly in complex arithmetic over SI units and solves them with
a finite-difference Newton. It shares no code with the builders.
"""

import numpy as np

ALPHA = complex(-0.5, np.sqrt(3.0) / 2.0)
A_FORT = np.array(
    [[1, 1, 1], [1, ALPHA**2, ALPHA], [1, ALPHA, ALPHA**2]], dtype=complex
)
A_INV = np.linalg.inv(A_FORT)


def fortescue_direct(ua, ub, uc):
    """(zero, positive, negative) sequence phasors via the matrix inverse."""
    return tuple(A_INV @ np.array([ua, ub, uc], dtype=complex))


def dense_pf_two_bus(Z, u_src, s_load):
    """Solve the two-bus, four-wire, wye constant-power-load fixture.

    Z: 4x4 total series impedance (ohm); u_src: 4 fixed phasors (V);
    s_load: 3 complex element powers (VA, drawn a-n, b-n, c-n).
    Unknowns: load bus voltages (4), series currents (4), load currents
    (3), source generator currents (3), generator powers (3).
    Returns the load-bus voltage phasors.
    """
    n_c = 17  # complex unknowns

    def unpack(xr):
        xc = xr[:n_c] + 1j * xr[n_c:]
        return xc[0:4], xc[4:8], xc[8:11], xc[11:14], xc[14:17]

    def residual(xr):
        u2, i_s, i_d, i_g, s_g = unpack(xr)
        r = []
        r.extend(u_src - u2 - Z @ i_s)  # series voltage drop
        for k in range(3):  # load power definitions
            r.append((u2[k] - u2[3]) * np.conj(i_d[k]) - s_load[k])
        # load bus balance: line delivers the leg currents
        for k in range(3):
            r.append(i_s[k] - i_d[k])
        r.append(i_s[3] + np.sum(i_d))
        # source bus balance on phases (neutral is grounded there)
        for k in range(3):
            r.append(i_g[k] - i_s[k])
        for k in range(3):  # slack power definitions
            r.append((u_src[k] - u_src[3]) * np.conj(i_g[k]) - s_g[k])
        rc = np.asarray(r)
        return np.concatenate([rc.real, rc.imag])

    x = np.zeros(2 * n_c)
    x[0:4] = u_src.real
    x[n_c : n_c + 4] = u_src.imag
    for _ in range(60):
        r = residual(x)
        if np.abs(r).max() < 1e-9:
            break
        J = np.zeros((2 * n_c, 2 * n_c))
        h = 1e-6
        for j in range(2 * n_c):
            xp = x.copy()
            xp[j] += h
            J[:, j] = (residual(xp) - r) / h
        x = x + np.linalg.solve(J, -r)
    else:
        raise RuntimeError("dense oracle did not converge")
    u2, *_ = unpack(x)
    return u2


def solve_yy_bank_two_port(n_t, z_w, u_src, s_load):
    """One phase of an ideal transformer with winding impedance z_w feeding
    a constant-power load; direct complex equations.

    Primary winding across (u_src[0], u_src[1]); secondary loop carries the
    load current through z_w. Unknowns: secondary terminal voltages (2),
    loop current. Returns (u_sec_x, u_sec_y, i_loop) with u_sec_y anchored
    at zero (grounded return).
    """

    def residual(xr):
        ux = complex(xr[0], xr[1])
        i = complex(xr[2], xr[3])
        # winding relation with series impedance on the secondary loop:
        # (u1 - u2) = n * (internal emf); internal emf - z_w i = ux - 0
        emf = (u_src[0] - u_src[1]) / n_t
        r1 = emf - z_w * i - ux
        r2 = ux * np.conj(i) - s_load
        rc = np.array([r1, r2])
        return np.concatenate([rc.real, rc.imag])

    x = np.array([abs(u_src[0] - u_src[1]) / n_t, 0.0, 0.0, 0.0])
    for _ in range(60):
        r = residual(x)
        if np.abs(r).max() < 1e-10:
            break
        J = np.zeros((4, 4))
        for j in range(4):
            xp = x.copy()
            xp[j] += 1e-7
            J[:, j] = (residual(xp) - r) / 1e-7
        x = x + np.linalg.solve(J, -r)
    else:
        raise RuntimeError("bank oracle did not converge")
    return complex(x[0], x[1]), 0.0 + 0.0j, complex(x[2], x[3])
