"""Compiled trajectory engine shared by the SCM and CM transports.

Depth z is the time variable.  Each step is a kick-drift-kick leapfrog in
the continuum potential; the atomic sites crossed during the step are
generated on the fly and handled at their own depth inside the drift, so
thorn kicks and kinks are exact impulses at the site.

mode 0: continuum only, mode 1: SCM kinks, mode 2: CM snapshot kicks.
"""

import math

import numba as nb
import numpy as np

from ..sampler import _p_e_orbital, sample_stack, uniform_spline_eval

MODE_CONTINUUM = 0
MODE_SCM = 1
MODE_CM = 2

KIND_VIB = 0
KIND_E = 1
KIND_CM = 2

# stats slots
ST_SITES = 0
ST_VIB = 1
ST_E = 2
ST_STRAINED = 3
ST_TRUNCATED = 4
ST_CLAMPED = 5
ST_STEPS = 6
N_STATS = 7

# option slots
OPT_CONTINUUM = 0
OPT_COLLISIONS = 1
OPT_THORNS = 2
OPT_APPLY = 3
OPT_STOP = 4
OPT_LOG = 5
N_OPTS = 6


def default_options(continuum=1.0, collisions=1.0, thorns=1.0, apply_kicks=True, stop=True, log=True,
                    log_cm=False):
    """Option vector for :func:`run_engine`; ``log_cm`` also records every CM site kick."""
    out = np.zeros(N_OPTS)
    out[OPT_CONTINUUM] = continuum
    out[OPT_COLLISIONS] = collisions
    out[OPT_THORNS] = thorns
    out[OPT_APPLY] = 1.0 if apply_kicks else 0.0
    out[OPT_STOP] = 1.0 if stop else 0.0
    out[OPT_LOG] = (2.0 if log_cm else 1.0) if log else 0.0
    return out


@nb.njit(cache=True, nogil=True)
def hermite(x, x0, h, vals, ders, periodic):
    """Cubic Hermite value and slope on a uniform grid (periodic wraps, otherwise clamps)."""
    n = vals.size
    t = x - x0
    if periodic:
        period = n * h
        t = t % period
    s = t / h
    i = int(math.floor(s))
    if periodic:
        if i >= n:
            i = n - 1
        j = i + 1 if i + 1 < n else 0
    else:
        if i < 0:
            i = 0
        elif i > n - 2:
            i = n - 2
        j = i + 1
    f = s - i
    f2 = f * f
    f3 = f2 * f
    v0 = vals[i]
    v1 = vals[j]
    d0 = ders[i] * h
    d1 = ders[j] * h
    val = (2 * f3 - 3 * f2 + 1) * v0 + (f3 - 2 * f2 + f) * d0 + (-2 * f3 + 3 * f2) * v1 + (f3 - f2) * d1
    slope = ((6 * f2 - 6 * f) * v0 + (3 * f2 - 4 * f + 1) * d0 + (-6 * f2 + 6 * f) * v1 + (3 * f2 - 2 * f) * d1) / h
    return val, slope


@nb.njit(cache=True, nogil=True)
def continuum_eval(geom, x, y, x0, h, vals, ders, periodic, spacing, neighbours):
    """Unit-charge continuum potential (eV) and its transverse gradient (eV/nm)."""
    if geom == 0:
        v, dv = hermite(x, x0, h, vals, ders, periodic)
        return v, dv, 0.0
    cut = h * (vals.size - 1)
    rx = x - math.floor(x / spacing + 0.5) * spacing
    ry = y - math.floor(y / spacing + 0.5) * spacing
    v = 0.0
    gx = 0.0
    gy = 0.0
    for m in range(neighbours.shape[0]):
        dx = rx - neighbours[m, 0]
        dy = ry - neighbours[m, 1]
        rho = math.sqrt(dx * dx + dy * dy)
        if rho >= cut:
            continue
        pv, pd = hermite(rho, 0.0, h, vals, ders, False)
        v += pv
        if rho > 0.0:
            gx += pd * dx / rho
            gy += pd * dy / rho
    return v, gx, gy


@nb.njit(cache=True, nogil=True)
def centreline(z, kz, phase, amp):
    cx = 0.0
    cy = 0.0
    for j in range(kz.size):
        c = math.cos(kz[j] * z + phase[j])
        cx += amp[j, 0] * c
        cy += amp[j, 1] * c
    return cx, cy


@nb.njit(cache=True, nogil=True)
def kick_profile(b, t, lb0, dlb, g, power):
    """b * K(b) for kick table t (eV nm); below the table it scales as b**power."""
    if b <= 0.0:
        return 0.0
    s = (math.log(b) - lb0) / dlb
    n = g.shape[1]
    if s < 0.0:
        return g[t, 0] * (b / math.exp(lb0)) ** power[t]
    if s >= n - 1:
        return 0.0
    i = int(s)
    f = s - i
    return g[t, i] * (1.0 - f) + g[t, i + 1] * f


@nb.njit(cache=True, nogil=True)
def _grow(buf):
    out = np.empty((buf.shape[0] * 2, buf.shape[1]))
    out[: buf.shape[0]] = buf
    return out


@nb.njit(cache=True, nogil=True)
def generate_sites(geom, z, dz, xr, yr, spacing, density, width, rng):
    """Mean sites crossed in (z, z + dz] near transverse point (xr, yr), sorted by depth.

    Planar: Poisson sites on every plane x = j*spacing within ``width``,
    uniform in y over [yr - width, yr + width].  Axial: Poisson atoms along
    each string within ``width`` of the point.
    """
    if geom == 0:
        j0 = int(math.ceil((xr - width) / spacing))
        j1 = int(math.floor((xr + width) / spacing))
        n_lines = max(j1 - j0 + 1, 0)
        counts = np.empty(n_lines, np.int64)
        mean = density * 2.0 * width * dz
        total = 0
        for m in range(n_lines):
            counts[m] = rng.poisson(mean)
            total += counts[m]
        sz = np.empty(total)
        sx = np.empty(total)
        sy = np.empty(total)
        p = 0
        for m in range(n_lines):
            for _ in range(counts[m]):
                sx[p] = (j0 + m) * spacing
                sz[p] = z + dz * rng.random()
                sy[p] = yr - width + 2.0 * width * rng.random()
                p += 1
    else:
        i0 = int(math.ceil((xr - width) / spacing))
        i1 = int(math.floor((xr + width) / spacing))
        k0 = int(math.ceil((yr - width) / spacing))
        k1 = int(math.floor((yr + width) / spacing))
        nx = max(i1 - i0 + 1, 0)
        ny = max(k1 - k0 + 1, 0)
        counts = np.empty(nx * ny, np.int64)
        mean = density * dz
        total = 0
        for m in range(nx * ny):
            counts[m] = rng.poisson(mean)
            total += counts[m]
        sz = np.empty(total)
        sx = np.empty(total)
        sy = np.empty(total)
        p = 0
        for m in range(nx * ny):
            gx = (i0 + m // ny) * spacing
            gy = (k0 + m % ny) * spacing
            for _ in range(counts[m]):
                sx[p] = gx
                sy[p] = gy
                sz[p] = z + dz * rng.random()
                p += 1
    order = np.argsort(sz)
    return sz[order], sx[order], sy[order]


@nb.njit(cache=True, nogil=True)
def _node(d, span, n):
    t = d / (span / (n - 1))
    i = int(t)
    if i >= n - 1:
        return n - 2, n - 1, 1.0
    return i, i + 1, t - i


@nb.njit(cache=True, nogil=True)
def scm_site(dx, dy, R, u1, scale, vib_range, sigA_coef, vib_cdf_q, vib_cdf_phi, vib_lnq, phi_edges,
             occ, s_range, sig_e_coef, proj_lb0, proj_dlb, proj_vals, e_cdf_q, e_cdf_phi, e_lnq, stats, rng):
    """Roll one site crossing; returns (kind, qx, qy) with kind -1 for no collision."""
    d2 = dx * dx + dy * dy
    if d2 >= R * R:
        return -1, 0.0, 0.0
    stats[ST_SITES] += 1
    d = math.sqrt(d2)
    pv = 0.0
    if d < vib_range:
        if d > 3.0 * u1:
            stats[ST_STRAINED] += 1
        h = vib_range / sigA_coef.shape[1]
        pv = scale * math.exp(-0.5 * d2 / (u1 * u1)) / (2.0 * math.pi * u1 * u1) * uniform_spline_eval(d, 0.0, h, sigA_coef)
    ux = rng.normal(0.0, u1)
    uy = rng.normal(0.0, u1)
    bx = dx - ux
    by = dy - uy
    b = math.sqrt(bx * bx + by * by)
    n_orb = occ.size
    pe = np.empty(n_orb)
    pe_tot = 0.0
    for k in range(n_orb):
        pe[k] = scale * _p_e_orbital(b, k, occ, s_range, sig_e_coef, proj_lb0, proj_dlb, proj_vals)
        pe_tot += pe[k]
    if pv + pe_tot > 1.0:
        stats[ST_CLAMPED] += 1
    r = rng.random()
    n_nodes = vib_cdf_q.shape[0]
    if r < pv:
        lo, hi, w = _node(d, vib_range, n_nodes)
        q, ph = sample_stack(lo, hi, w, vib_cdf_q, vib_cdf_phi, vib_lnq, phi_edges, rng)
        base = math.atan2(dy, dx)
        stats[ST_VIB] += 1
        return KIND_VIB, q * math.cos(base + ph), q * math.sin(base + ph)
    r -= pv
    if r < pe_tot:
        k = 0
        while k < n_orb - 1 and r >= pe[k]:
            r -= pe[k]
            k += 1
        lo, hi, w = _node(b, s_range[k], n_nodes)
        q, ph = sample_stack(lo, hi, w, e_cdf_q[k], e_cdf_phi[k], e_lnq, phi_edges, rng)
        base = math.atan2(by, bx)
        stats[ST_E] += 1
        return KIND_E, q * math.cos(base + ph), q * math.sin(base + ph)
    return -1, 0.0, 0.0


@nb.njit(cache=True, nogil=True)
def cm_site(dx, dy, R, u1, kick_lb0, kick_dlb, kick_g, kick_pow, shell_cum, shell_shape, shell_beta,
            n_electrons, q_cap, stats, rng):
    """Summed eikonal kick (eV) of one snapshot atom and its electrons.

    Table rows: 0 bare-atom kick, 1 thermally smeared atom kick, 2 screened
    point electron, 3 + k screened orbital cloud of shell k.
    """
    d2 = dx * dx + dy * dy
    if d2 >= R * R:
        return False, 0.0, 0.0
    stats[ST_SITES] += 1
    d = math.sqrt(d2)
    ux = rng.normal(0.0, u1)
    uy = rng.normal(0.0, u1)
    bx = dx - ux
    by = dy - uy
    b2 = bx * bx + by * by
    b = math.sqrt(b2)
    kx = 0.0
    ky = 0.0
    if b > 0.0:
        g = kick_profile(b, 0, kick_lb0, kick_dlb, kick_g, kick_pow)
        kx += g * bx / b2
        ky += g * by / b2
    if d > 0.0:
        g = kick_profile(d, 1, kick_lb0, kick_dlb, kick_g, kick_pow)
        kx -= g * dx / d2
        ky -= g * dy / d2
    n_shell = shell_cum.size
    cap_ev = q_cap * 1e6
    in_shell = np.zeros(n_shell)
    for _ in range(n_electrons):
        r = rng.random()
        k = 0
        while k < n_shell - 1 and r >= shell_cum[k]:
            k += 1
        rad = rng.gamma(shell_shape[k], 1.0 / shell_beta[k])
        cos_t = 2.0 * rng.random() - 1.0
        phi = 2.0 * math.pi * rng.random()
        sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        ex = bx - rad * sin_t * math.cos(phi)
        ey = by - rad * sin_t * math.sin(phi)
        e2 = ex * ex + ey * ey
        if e2 > 0.0:
            e = math.sqrt(e2)
            g = kick_profile(e, 2, kick_lb0, kick_dlb, kick_g, kick_pow)
            if abs(g) / e > cap_ev:
                stats[ST_TRUNCATED] += 1
            else:
                kx += g * ex / e2
                ky += g * ey / e2
        in_shell[k] += 1.0
    if b > 0.0:
        # the screened clouds all sit at the atom: one profile lookup per shell
        for k in range(n_shell):
            if in_shell[k] > 0.0:
                g = in_shell[k] * kick_profile(b, 3 + k, kick_lb0, kick_dlb, kick_g, kick_pow)
                kx += g * bx / b2
                ky += g * by / b2
    return True, kx, ky


@nb.njit(cache=True, nogil=True)
def run_engine(mode, geom, E, sign, U0, e_min,
               cx0, ch, cvals, cders, cperiodic, spacing, neighbours,
               site_density, R, u1,
               cl_kz, cl_phase, cl_amp,
               vib_range, sigA_coef, vib_cdf_q, vib_cdf_phi, vib_lnq, phi_edges,
               occ, s_range, sig_e_coef, proj_lb0, proj_dlb, proj_vals, e_cdf_q, e_cdf_phi, e_lnq,
               kick_lb0, kick_dlb, kick_g, kick_pow, shell_cum, shell_shape, shell_beta, n_electrons, q_cap,
               x, y, px, py, depth, dz, opts, rng):
    """Integrate one trajectory to ``depth`` (nm) or until it dechannels.

    Returns (history (n, 2) of depth/E_perp at step ends, events (m, 8) of
    depth/kind/qx/qy/E_perp before/after/px before/py before, stats,
    dechannel depth or -1, final (x, y, px, py)).
    """
    c_scale = opts[OPT_CONTINUUM]
    coll_scale = opts[OPT_COLLISIONS]
    thorn_scale = opts[OPT_THORNS]
    apply = opts[OPT_APPLY] > 0.0
    stop = opts[OPT_STOP] > 0.0
    log = opts[OPT_LOG] > 0.0
    log_cm = opts[OPT_LOG] > 1.5
    axial = geom == 1
    # with a zero collision (SCM) or thorn (CM) scale no site can contribute
    sites_on = (mode == 1 and coll_scale > 0.0) or (mode == 2 and thorn_scale != 0.0)
    width = R * 1.1
    n_steps = int(math.ceil(depth / dz - 1e-9))
    hist = np.empty((n_steps + 2, 2))
    events = np.empty((1024, 8))
    n_ev = 0
    stats = np.zeros(N_STATS, np.int64)
    dech = -1.0
    inv2E = 1e6 / (2.0 * E)
    force_unit = -sign * 1e-6 * c_scale  # eV/nm -> MeV/nm, particle force

    cx, cy = centreline(0.0, cl_kz, cl_phase, cl_amp)
    v, gx, gy = continuum_eval(geom, x - cx, y - cy, cx0, ch, cvals, cders, cperiodic, spacing, neighbours)
    kin = px * px + py * py if axial else px * px
    eperp = kin * inv2E + sign * v - e_min
    hist[0, 0] = 0.0
    hist[0, 1] = eperp
    n_hist = 1
    if eperp > U0:
        dech = 0.0
        if stop:
            return hist[:n_hist], events[:0], stats, dech, np.array([x, y, px, py])

    z = 0.0
    for step in range(n_steps):
        h = min(dz, depth - z)
        if h <= 0.0:
            break
        stats[ST_STEPS] += 1
        px += 0.5 * h * force_unit * gx
        py += 0.5 * h * force_unit * gy
        x_ref = x
        y_ref = y
        z_ref = z
        stopped = False
        if sites_on:
            sz, sx, sy = generate_sites(geom, z, h, x - cx, y - cy, spacing, site_density, width, rng)
            for m in range(sz.size):
                zs = sz[m]
                xs = x_ref + px / E * (zs - z_ref)
                ys = y_ref + py / E * (zs - z_ref)
                ccx, ccy = centreline(zs, cl_kz, cl_phase, cl_amp)
                dxs = xs - ccx - sx[m]
                dys = ys - ccy - sy[m]
                if mode == 1:
                    kind, qx, qy = scm_site(dxs, dys, R, u1, coll_scale, vib_range, sigA_coef, vib_cdf_q,
                                            vib_cdf_phi, vib_lnq, phi_edges, occ, s_range, sig_e_coef,
                                            proj_lb0, proj_dlb, proj_vals, e_cdf_q, e_cdf_phi, e_lnq, stats, rng)
                    if kind < 0:
                        continue
                else:
                    hit, kx, ky = cm_site(dxs, dys, R, u1, kick_lb0, kick_dlb, kick_g, kick_pow, shell_cum,
                                          shell_shape, shell_beta, n_electrons, q_cap, stats, rng)
                    if not hit:
                        continue
                    kind = KIND_CM if log_cm else -1
                    qx = sign * 1e-6 * thorn_scale * kx
                    qy = sign * 1e-6 * thorn_scale * ky
                    if qx == 0.0 and qy == 0.0:
                        continue
                if not apply:
                    if log and kind >= 0:
                        vs, _, _ = continuum_eval(geom, xs - ccx, ys - ccy, cx0, ch, cvals, cders, cperiodic,
                                                  spacing, neighbours)
                        e_b = (px * px + py * py if axial else px * px) * inv2E + sign * vs - e_min
                        if n_ev == events.shape[0]:
                            events = _grow(events)
                        events[n_ev, 0] = zs
                        events[n_ev, 1] = kind
                        events[n_ev, 2] = qx
                        events[n_ev, 3] = qy
                        events[n_ev, 4] = e_b
                        events[n_ev, 5] = e_b
                        events[n_ev, 6] = px
                        events[n_ev, 7] = py
                        n_ev += 1
                    continue
                vs, _, _ = continuum_eval(geom, xs - ccx, ys - ccy, cx0, ch, cvals, cders, cperiodic, spacing,
                                          neighbours)
                pot = sign * vs - e_min
                e_b = (px * px + py * py if axial else px * px) * inv2E + pot
                px_b = px
                py_b = py
                px += qx
                py += qy
                e_a = (px * px + py * py if axial else px * px) * inv2E + pot
                x_ref = xs
                y_ref = ys
                z_ref = zs
                if log and kind >= 0:
                    if n_ev == events.shape[0]:
                        events = _grow(events)
                    events[n_ev, 0] = zs
                    events[n_ev, 1] = kind
                    events[n_ev, 2] = qx
                    events[n_ev, 3] = qy
                    events[n_ev, 4] = e_b
                    events[n_ev, 5] = e_a
                    events[n_ev, 6] = px_b
                    events[n_ev, 7] = py_b
                    n_ev += 1
                if e_a > U0 and dech < 0.0:
                    dech = zs
                    if stop:
                        x = xs
                        y = ys
                        hist[n_hist, 0] = zs
                        hist[n_hist, 1] = e_a
                        n_hist += 1
                        stopped = True
                        break
        if stopped:
            break
        z_new = z + h
        x = x_ref + px / E * (z_new - z_ref)
        y = y_ref + py / E * (z_new - z_ref)
        z = z_new
        cx, cy = centreline(z, cl_kz, cl_phase, cl_amp)
        v, gx, gy = continuum_eval(geom, x - cx, y - cy, cx0, ch, cvals, cders, cperiodic, spacing, neighbours)
        px += 0.5 * h * force_unit * gx
        py += 0.5 * h * force_unit * gy
        kin = px * px + py * py if axial else px * px
        eperp = kin * inv2E + sign * v - e_min
        hist[n_hist, 0] = z
        hist[n_hist, 1] = eperp
        n_hist += 1
        if eperp > U0 and dech < 0.0:
            dech = z
            if stop:
                break
    return hist[:n_hist], events[:n_ev], stats, dech, np.array([x, y, px, py])
