"""Numba kernels for the contact pipeline.

Everything here operates on packed ndarrays owned by ``World``; no Python
objects cross this boundary. All loops are sequential and branch on data only,
so results are bitwise-deterministic for identical inputs.

Shape kind codes: 0 sphere, 1 cuboid, 2 capsule, 3 halfplane.
Contact convention: normal points from shape/body `a` into `b`; the stored
force is the force exerted on body `b` (body `a` receives the exact negation).
"""
from __future__ import annotations

import numpy as np
from numba import njit

KIND_SPHERE = 0
KIND_CUBOID = 1
KIND_CAPSULE = 2
KIND_HALFPLANE = 3

_BIG = 1e12


@njit(cache=True)
def _quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@njit(cache=True)
def _quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _norm3(v):
    return np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


@njit(cache=True)
def compute_world_transforms(
    body_pos, body_quat, shape_body, shape_local_pos, shape_local_quat, w_pos, w_quat, w_rot
):
    """World pose and rotation matrix of every shape."""
    n = shape_body.shape[0]
    for s in range(n):
        b = shape_body[s]
        R = _quat_to_mat(body_quat[b])
        for i in range(3):
            w_pos[s, i] = body_pos[b, i]
            for j in range(3):
                w_pos[s, i] += R[i, j] * shape_local_pos[s, j]
        q = _quat_mul(body_quat[b], shape_local_quat[s])
        for i in range(4):
            w_quat[s, i] = q[i]
        Rs = _quat_to_mat(q)
        for i in range(3):
            for j in range(3):
                w_rot[s, i, j] = Rs[i, j]


@njit(cache=True)
def compute_aabbs(shape_kind, shape_params, w_pos, w_rot, aabb_lo, aabb_hi):
    n = shape_kind.shape[0]
    for s in range(n):
        k = shape_kind[s]
        if k == KIND_SPHERE:
            r = shape_params[s, 0]
            for i in range(3):
                aabb_lo[s, i] = w_pos[s, i] - r
                aabb_hi[s, i] = w_pos[s, i] + r
        elif k == KIND_CUBOID:
            for i in range(3):
                e = (
                    abs(w_rot[s, i, 0]) * shape_params[s, 0]
                    + abs(w_rot[s, i, 1]) * shape_params[s, 1]
                    + abs(w_rot[s, i, 2]) * shape_params[s, 2]
                )
                aabb_lo[s, i] = w_pos[s, i] - e
                aabb_hi[s, i] = w_pos[s, i] + e
        elif k == KIND_CAPSULE:
            r = shape_params[s, 0]
            hl = shape_params[s, 1]
            for i in range(3):
                e = abs(w_rot[s, i, 2]) * hl + r
                aabb_lo[s, i] = w_pos[s, i] - e
                aabb_hi[s, i] = w_pos[s, i] + e
        else:  # halfplane: unbounded, always passes broadphase
            for i in range(3):
                aabb_lo[s, i] = -_BIG
                aabb_hi[s, i] = _BIG


@njit(cache=True)
def _emit(out_sa, out_sb, out_pair, out_point, out_normal, out_pen, count, sa, sb, pair, px, py, pz, nx, ny, nz, pen):
    if count >= out_sa.shape[0]:
        return count  # saturated; caller raises on overflow flag
    out_sa[count] = sa
    out_sb[count] = sb
    out_pair[count] = pair
    out_point[count, 0] = px
    out_point[count, 1] = py
    out_point[count, 2] = pz
    out_normal[count, 0] = nx
    out_normal[count, 1] = ny
    out_normal[count, 2] = nz
    out_pen[count] = pen
    return count + 1


@njit(cache=True)
def _sphere_sphere(pa, ra, pb, rb):
    """Returns (hit, point, normal a->b, penetration)."""
    d = np.empty(3)
    for i in range(3):
        d[i] = pb[i] - pa[i]
    dist = _norm3(d)
    pen = ra + rb - dist
    if pen <= 0.0:
        return False, d, d, 0.0
    n = np.empty(3)
    if dist > 1e-12:
        for i in range(3):
            n[i] = d[i] / dist
    else:
        n[0] = 0.0
        n[1] = 0.0
        n[2] = 1.0
    p = np.empty(3)
    for i in range(3):
        p[i] = pa[i] + n[i] * (ra - 0.5 * pen)
    return True, p, n, pen


@njit(cache=True)
def _point_in_box_pushout(lc, h):
    """Deepest-axis pushout for a point inside a box. Returns (face_dist, out_dir local)."""
    best = _BIG
    dir_ = np.zeros(3)
    for i in range(3):
        d_pos = h[i] - lc[i]
        d_neg = h[i] + lc[i]
        if d_pos < best:
            best = d_pos
            dir_[0] = 0.0
            dir_[1] = 0.0
            dir_[2] = 0.0
            dir_[i] = 1.0
        if d_neg < best:
            best = d_neg
            dir_[0] = 0.0
            dir_[1] = 0.0
            dir_[2] = 0.0
            dir_[i] = -1.0
    return best, dir_


@njit(cache=True)
def _sphere_box(c, r, bp, bR, h):
    """Sphere (center c, radius r) vs oriented box. Returns (hit, point, normal sphere->box, pen)."""
    lc = np.empty(3)
    for i in range(3):
        lc[i] = 0.0
        for j in range(3):
            lc[i] += bR[j, i] * (c[j] - bp[j])
    clamped = np.empty(3)
    inside = True
    for i in range(3):
        v = lc[i]
        if v > h[i]:
            v = h[i]
            inside = False
        elif v < -h[i]:
            v = -h[i]
            inside = False
        clamped[i] = v
    n = np.empty(3)
    p = np.empty(3)
    if not inside:
        delta = np.empty(3)
        for i in range(3):
            delta[i] = lc[i] - clamped[i]
        dist = _norm3(delta)
        pen = r - dist
        if pen <= 0.0:
            return False, p, n, 0.0
        # local direction from box surface toward sphere center
        for i in range(3):
            delta[i] /= dist
        # world normal from sphere into box
        for i in range(3):
            n[i] = -(bR[i, 0] * delta[0] + bR[i, 1] * delta[1] + bR[i, 2] * delta[2])
        for i in range(3):
            p[i] = c[i] + n[i] * (r - 0.5 * pen)
        return True, p, n, pen
    face_dist, out_dir = _point_in_box_pushout(lc, h)
    pen = r + face_dist
    for i in range(3):
        n[i] = -(bR[i, 0] * out_dir[0] + bR[i, 1] * out_dir[1] + bR[i, 2] * out_dir[2])
        p[i] = c[i]
    return True, p, n, pen


@njit(cache=True)
def _closest_on_segment(p, e1, e2):
    d = np.empty(3)
    for i in range(3):
        d[i] = e2[i] - e1[i]
    dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    if dd < 1e-16:
        return e1.copy()
    t = ((p[0] - e1[0]) * d[0] + (p[1] - e1[1]) * d[1] + (p[2] - e1[2]) * d[2]) / dd
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    out = np.empty(3)
    for i in range(3):
        out[i] = e1[i] + t * d[i]
    return out


@njit(cache=True)
def _segment_segment(p1, q1, p2, q2):
    """Closest points between segments [p1,q1] and [p2,q2] (Ericson 5.1.9)."""
    d1 = np.empty(3)
    d2 = np.empty(3)
    r = np.empty(3)
    for i in range(3):
        d1[i] = q1[i] - p1[i]
        d2[i] = q2[i] - p2[i]
        r[i] = p1[i] - p2[i]
    a = d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2]
    e = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]
    f = d2[0] * r[0] + d2[1] * r[1] + d2[2] * r[2]
    s = 0.0
    t = 0.0
    if a <= 1e-16 and e <= 1e-16:
        s = 0.0
        t = 0.0
    elif a <= 1e-16:
        t = min(1.0, max(0.0, f / e))
    else:
        c = d1[0] * r[0] + d1[1] * r[1] + d1[2] * r[2]
        if e <= 1e-16:
            s = min(1.0, max(0.0, -c / a))
        else:
            b = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2]
            denom = a * e - b * b
            if denom > 1e-16:
                s = min(1.0, max(0.0, (b * f - c * e) / denom))
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = min(1.0, max(0.0, (b - c) / a))
    c1 = np.empty(3)
    c2 = np.empty(3)
    for i in range(3):
        c1[i] = p1[i] + s * d1[i]
        c2[i] = p2[i] + t * d2[i]
    return c1, c2


@njit(cache=True)
def _box_point_dist2(pt, bp, bR, h):
    lc = np.empty(3)
    for i in range(3):
        lc[i] = 0.0
        for j in range(3):
            lc[i] += bR[j, i] * (pt[j] - bp[j])
    d2 = 0.0
    for i in range(3):
        ex = abs(lc[i]) - h[i]
        if ex > 0.0:
            d2 += ex * ex
    return d2


@njit(cache=True)
def _capsule_box_closest_t(e1, e2, bp, bR, h):
    """Ternary minimization of point-box distance along the capsule segment.

    The distance can have a flat valley (segment parallel to a face); ties
    shrink both ends so the result converges to the valley's middle instead of
    jumping between its edges as the segment rotates.
    """
    lo = 0.0
    hi = 1.0
    pt = np.empty(3)
    for _ in range(34):
        x1 = lo + (hi - lo) / 3.0
        x2 = hi - (hi - lo) / 3.0
        for i in range(3):
            pt[i] = e1[i] + x1 * (e2[i] - e1[i])
        f1 = _box_point_dist2(pt, bp, bR, h)
        for i in range(3):
            pt[i] = e1[i] + x2 * (e2[i] - e1[i])
        f2 = _box_point_dist2(pt, bp, bR, h)
        if f1 < f2 - 1e-18:
            hi = x2
        elif f2 < f1 - 1e-18:
            lo = x1
        else:
            lo = x1
            hi = x2
    return 0.5 * (lo + hi)


@njit(cache=True)
def _clip_polygon_axis(poly, npts, axis, bound, out):
    """Clip 2D polygon against axis <= bound (axis flag selects u/v and sign)."""
    # axis: 0:+u,1:-u,2:+v,3:-v
    m = 0
    for i in range(npts):
        j = (i + 1) % npts
        if axis == 0:
            ci = poly[i, 0] <= bound
            cj = poly[j, 0] <= bound
        elif axis == 1:
            ci = -poly[i, 0] <= bound
            cj = -poly[j, 0] <= bound
        elif axis == 2:
            ci = poly[i, 1] <= bound
            cj = poly[j, 1] <= bound
        else:
            ci = -poly[i, 1] <= bound
            cj = -poly[j, 1] <= bound
        if ci:
            out[m, 0] = poly[i, 0]
            out[m, 1] = poly[i, 1]
            out[m, 2] = poly[i, 2]
            m += 1
        if ci != cj:
            if axis <= 1:
                a = poly[i, 0] if axis == 0 else -poly[i, 0]
                b = poly[j, 0] if axis == 0 else -poly[j, 0]
            else:
                a = poly[i, 1] if axis == 2 else -poly[i, 1]
                b = poly[j, 1] if axis == 2 else -poly[j, 1]
            t = (bound - a) / (b - a)
            for k in range(3):
                out[m, k] = poly[i, k] + t * (poly[j, k] - poly[i, k])
            m += 1
    return m


@njit(cache=True)
def _box_box(pa, Ra, ha, pb, Rb, hb, pts, norms, pens):
    """SAT box-box with face clipping; up to 8 contacts.

    Writes into pts (8,3), norms (8,3) [a->b], pens (8,); returns count.
    """
    # rotation of B in A frame, translation A->B in A frame
    C = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += Ra[k, i] * Rb[k, j]
            C[i, j] = s
    absC = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            absC[i, j] = abs(C[i, j]) + 1e-12
    t = np.empty(3)
    for i in range(3):
        s = 0.0
        for k in range(3):
            s += Ra[k, i] * (pb[k] - pa[k])
        t[i] = s

    best_face_sep = -_BIG
    best_face_axis = -1  # 0..2 faces of A, 3..5 faces of B
    # faces of A
    for i in range(3):
        rb_ = absC[i, 0] * hb[0] + absC[i, 1] * hb[1] + absC[i, 2] * hb[2]
        sep = abs(t[i]) - (ha[i] + rb_)
        if sep > 0.0:
            return 0
        if sep > best_face_sep:
            best_face_sep = sep
            best_face_axis = i
    # faces of B
    tb = np.empty(3)
    for j in range(3):
        s = 0.0
        for i in range(3):
            s += C[i, j] * t[i]
        tb[j] = s
    for j in range(3):
        ra_ = absC[0, j] * ha[0] + absC[1, j] * ha[1] + absC[2, j] * ha[2]
        sep = abs(tb[j]) - (hb[j] + ra_)
        if sep > 0.0:
            return 0
        if sep + 1e-12 > best_face_sep:
            best_face_sep = sep
            best_face_axis = 3 + j
    # edge cross axes
    best_edge_sep = -_BIG
    best_edge_i = -1
    best_edge_j = -1
    for i in range(3):
        for j in range(3):
            # L = e_i x (C col j), expressed in A frame
            L = np.zeros(3)
            i1 = (i + 1) % 3
            i2 = (i + 2) % 3
            L[i1] = -C[i2, j]
            L[i2] = C[i1, j]
            ln = _norm3(L)
            if ln < 1e-9:
                continue
            for k in range(3):
                L[k] /= ln
            ra_ = ha[0] * abs(L[0]) + ha[1] * abs(L[1]) + ha[2] * abs(L[2])
            rb_ = 0.0
            for m in range(3):
                d = 0.0
                for k in range(3):
                    d += L[k] * C[k, m]
                rb_ += hb[m] * abs(d)
            tl = t[0] * L[0] + t[1] * L[1] + t[2] * L[2]
            sep = abs(tl) - (ra_ + rb_)
            if sep > 0.0:
                return 0
            if sep > best_edge_sep:
                best_edge_sep = sep
                best_edge_i = i
                best_edge_j = j

    use_edge = best_edge_sep > best_face_sep * 0.95 + 1e-9 and best_edge_i >= 0

    if use_edge:
        # rebuild the winning axis in world frame, oriented a -> b
        i = best_edge_i
        j = best_edge_j
        L = np.zeros(3)
        i1 = (i + 1) % 3
        i2 = (i + 2) % 3
        L[i1] = -C[i2, j]
        L[i2] = C[i1, j]
        ln = _norm3(L)
        for k in range(3):
            L[k] /= ln
        if t[0] * L[0] + t[1] * L[1] + t[2] * L[2] < 0.0:
            for k in range(3):
                L[k] = -L[k]
        nw = np.empty(3)
        for k in range(3):
            nw[k] = Ra[k, 0] * L[0] + Ra[k, 1] * L[1] + Ra[k, 2] * L[2]
        # supporting edge on A (direction e_i), corner signs from L
        ca = np.zeros(3)
        for k in range(3):
            if k != i:
                ca[k] = ha[k] if L[k] > 0.0 else -ha[k]
        a1 = np.empty(3)
        a2 = np.empty(3)
        for k in range(3):
            base = pa[k] + Ra[k, 0] * ca[0] + Ra[k, 1] * ca[1] + Ra[k, 2] * ca[2]
            a1[k] = base - Ra[k, i] * ha[i]
            a2[k] = base + Ra[k, i] * ha[i]
        # supporting edge on B: L in B frame
        Lb = np.empty(3)
        for m in range(3):
            s = 0.0
            for k in range(3):
                s += L[k] * C[k, m]
            Lb[m] = s
        cb = np.zeros(3)
        for m in range(3):
            if m != j:
                cb[m] = -hb[m] if Lb[m] > 0.0 else hb[m]
        b1 = np.empty(3)
        b2 = np.empty(3)
        for k in range(3):
            base = pb[k] + Rb[k, 0] * cb[0] + Rb[k, 1] * cb[1] + Rb[k, 2] * cb[2]
            b1[k] = base - Rb[k, j] * hb[j]
            b2[k] = base + Rb[k, j] * hb[j]
        c1, c2 = _segment_segment(a1, a2, b1, b2)
        for k in range(3):
            pts[0, k] = 0.5 * (c1[k] + c2[k])
            norms[0, k] = nw[k]
        pens[0] = -best_edge_sep
        return 1

    # face contact: build reference/incident boxes
    if best_face_axis < 3:
        ref_i = best_face_axis
        ref_p, ref_R, ref_h = pa, Ra, ha
        inc_p, inc_R, inc_h = pb, Rb, hb
        flip = False
    else:
        ref_i = best_face_axis - 3
        ref_p, ref_R, ref_h = pb, Rb, hb
        inc_p, inc_R, inc_h = pa, Ra, ha
        flip = True

    # everything in the reference box frame
    Ci = np.empty((3, 3))  # rotation of incident in ref frame
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += ref_R[k, i] * inc_R[k, j]
            Ci[i, j] = s
    ti = np.empty(3)
    for i in range(3):
        s = 0.0
        for k in range(3):
            s += ref_R[k, i] * (inc_p[k] - ref_p[k])
        ti[i] = s
    sgn = 1.0 if ti[ref_i] >= 0.0 else -1.0
    # incident face: axis of incident box most anti-parallel to ref normal
    best = -1.0
    inc_j = 0
    for j in range(3):
        v = abs(Ci[ref_i, j])
        if v > best:
            best = v
            inc_j = j
    inc_sgn = -1.0 if Ci[ref_i, inc_j] * sgn > 0.0 else 1.0

    u = (ref_i + 1) % 3
    v = (ref_i + 2) % 3
    ju = (inc_j + 1) % 3
    jv = (inc_j + 2) % 3
    # 4 corners of the incident face in ref frame, stored as (u, v, n) coords
    poly = np.empty((8, 3))
    buf = np.empty((12, 3))
    signs_u = (-1.0, -1.0, 1.0, 1.0)
    signs_v = (-1.0, 1.0, 1.0, -1.0)  # winding order around the face
    wv = np.empty(3)
    for idx in range(4):
        lc = np.empty(3)
        lc[inc_j] = inc_sgn * inc_h[inc_j]
        lc[ju] = signs_u[idx] * inc_h[ju]
        lc[jv] = signs_v[idx] * inc_h[jv]
        # to ref frame
        for k in range(3):
            wv[k] = ti[k] + Ci[k, 0] * lc[0] + Ci[k, 1] * lc[1] + Ci[k, 2] * lc[2]
        poly[idx, 0] = wv[u]
        poly[idx, 1] = wv[v]
        poly[idx, 2] = wv[ref_i]
    npts = 4
    npts = _clip_polygon_axis(poly, npts, 0, ref_h[u], buf)
    for i in range(npts):
        for k in range(3):
            poly[i, k] = buf[i, k]
    npts = _clip_polygon_axis(poly, npts, 1, ref_h[u], buf)
    for i in range(npts):
        for k in range(3):
            poly[i, k] = buf[i, k]
    npts = _clip_polygon_axis(poly, npts, 2, ref_h[v], buf)
    for i in range(npts):
        for k in range(3):
            poly[i, k] = buf[i, k]
    npts = _clip_polygon_axis(poly, npts, 3, ref_h[v], buf)

    count = 0
    for i in range(npts):
        if count >= 8:
            break
        cu = buf[i, 0]
        cv = buf[i, 1]
        cn = buf[i, 2]
        pen = ref_h[ref_i] - sgn * cn
        if pen <= 0.0:
            continue
        lc = np.empty(3)
        lc[u] = cu
        lc[v] = cv
        lc[ref_i] = cn
        wpt = np.empty(3)
        for k in range(3):
            wpt[k] = ref_p[k] + ref_R[k, 0] * lc[0] + ref_R[k, 1] * lc[1] + ref_R[k, 2] * lc[2]
        # world normal pointing from ref box outward through its face
        nw = np.empty(3)
        for k in range(3):
            nw[k] = sgn * ref_R[k, ref_i]
        if flip:
            for k in range(3):
                nw[k] = -nw[k]
        # contact normal must run a -> b; ref=A means outward A face already a->b
        for k in range(3):
            pts[count, k] = wpt[k]
            norms[count, k] = nw[k]
        pens[count] = pen
        count += 1
    return count


@njit(cache=True)
def narrowphase(
    pair_sa,
    pair_sb,
    shape_kind,
    shape_params,
    w_pos,
    w_rot,
    aabb_lo,
    aabb_hi,
    out_sa,
    out_sb,
    out_pair,
    out_point,
    out_normal,
    out_pen,
):
    """Detect contacts for every candidate pair. Returns count (or -1 on overflow)."""
    count = 0
    n_pairs = pair_sa.shape[0]
    pts = np.empty((8, 3))
    norms = np.empty((8, 3))
    pens = np.empty(8)
    for p in range(n_pairs):
        sa = pair_sa[p]
        sb = pair_sb[p]
        # broadphase
        hit = True
        for i in range(3):
            if aabb_lo[sa, i] > aabb_hi[sb, i] or aabb_lo[sb, i] > aabb_hi[sa, i]:
                hit = False
                break
        if not hit:
            continue
        ka = shape_kind[sa]
        kb = shape_kind[sb]
        # dispatch with canonical kind order, flipping normals when swapped
        if ka <= kb:
            s1, s2, flip = sa, sb, False
        else:
            s1, s2, flip = sb, sa, True
        k1 = shape_kind[s1]
        k2 = shape_kind[s2]
        n_new = 0
        if k1 == KIND_SPHERE and k2 == KIND_SPHERE:
            ok, pt, nr, pen = _sphere_sphere(w_pos[s1], shape_params[s1, 0], w_pos[s2], shape_params[s2, 0])
            if ok:
                pts[0] = pt
                norms[0] = nr
                pens[0] = pen
                n_new = 1
        elif k1 == KIND_SPHERE and k2 == KIND_CUBOID:
            ok, pt, nr, pen = _sphere_box(w_pos[s1], shape_params[s1, 0], w_pos[s2], w_rot[s2], shape_params[s2])
            if ok:
                pts[0] = pt
                norms[0] = nr
                pens[0] = pen
                n_new = 1
        elif k1 == KIND_SPHERE and k2 == KIND_CAPSULE:
            e1 = np.empty(3)
            e2 = np.empty(3)
            hl = shape_params[s2, 1]
            for i in range(3):
                e1[i] = w_pos[s2, i] - w_rot[s2, i, 2] * hl
                e2[i] = w_pos[s2, i] + w_rot[s2, i, 2] * hl
            q = _closest_on_segment(w_pos[s1], e1, e2)
            ok, pt, nr, pen = _sphere_sphere(w_pos[s1], shape_params[s1, 0], q, shape_params[s2, 0])
            if ok:
                pts[0] = pt
                norms[0] = nr
                pens[0] = pen
                n_new = 1
        elif k1 == KIND_SPHERE and k2 == KIND_HALFPLANE:
            nrm = np.empty(3)
            for i in range(3):
                nrm[i] = w_rot[s2, i, 2]
            d = 0.0
            for i in range(3):
                d += nrm[i] * (w_pos[s1, i] - w_pos[s2, i])
            pen = shape_params[s1, 0] - d
            if pen > 0.0:
                for i in range(3):
                    pts[0, i] = w_pos[s1, i] - nrm[i] * (shape_params[s1, 0] - 0.5 * pen)
                    norms[0, i] = -nrm[i]
                pens[0] = pen
                n_new = 1
        elif k1 == KIND_CUBOID and k2 == KIND_CUBOID:
            n_new = _box_box(
                w_pos[s1], w_rot[s1], shape_params[s1], w_pos[s2], w_rot[s2], shape_params[s2], pts, norms, pens
            )
        elif k1 == KIND_CUBOID and k2 == KIND_CAPSULE:
            e1 = np.empty(3)
            e2 = np.empty(3)
            hl = shape_params[s2, 1]
            for i in range(3):
                e1[i] = w_pos[s2, i] - w_rot[s2, i, 2] * hl
                e2[i] = w_pos[s2, i] + w_rot[s2, i, 2] * hl
            t = _capsule_box_closest_t(e1, e2, w_pos[s1], w_rot[s1], shape_params[s1])
            cpt = np.empty(3)
            for i in range(3):
                cpt[i] = e1[i] + t * (e2[i] - e1[i])
            ok, pt, nr, pen = _sphere_box(cpt, shape_params[s2, 0], w_pos[s1], w_rot[s1], shape_params[s1])
            if ok:
                # normal came out capsule-point -> box; pair order is box -> capsule
                pts[0] = pt
                for i in range(3):
                    norms[0, i] = -nr[i]
                pens[0] = pen
                n_new = 1
        elif k1 == KIND_CUBOID and k2 == KIND_HALFPLANE:
            nrm = np.empty(3)
            for i in range(3):
                nrm[i] = w_rot[s2, i, 2]
            h = shape_params[s1]
            for sx in (-1.0, 1.0):
                for sy in (-1.0, 1.0):
                    for sz in (-1.0, 1.0):
                        if n_new >= 8:
                            continue
                        vx = w_pos[s1, 0] + w_rot[s1, 0, 0] * sx * h[0] + w_rot[s1, 0, 1] * sy * h[1] + w_rot[s1, 0, 2] * sz * h[2]
                        vy = w_pos[s1, 1] + w_rot[s1, 1, 0] * sx * h[0] + w_rot[s1, 1, 1] * sy * h[1] + w_rot[s1, 1, 2] * sz * h[2]
                        vz = w_pos[s1, 2] + w_rot[s1, 2, 0] * sx * h[0] + w_rot[s1, 2, 1] * sy * h[1] + w_rot[s1, 2, 2] * sz * h[2]
                        d = nrm[0] * (vx - w_pos[s2, 0]) + nrm[1] * (vy - w_pos[s2, 1]) + nrm[2] * (vz - w_pos[s2, 2])
                        if d < 0.0:
                            pts[n_new, 0] = vx
                            pts[n_new, 1] = vy
                            pts[n_new, 2] = vz
                            for i in range(3):
                                norms[n_new, i] = -nrm[i]
                            pens[n_new] = -d
                            n_new += 1
        elif k1 == KIND_CAPSULE and k2 == KIND_CAPSULE:
            a1 = np.empty(3)
            a2 = np.empty(3)
            b1 = np.empty(3)
            b2 = np.empty(3)
            hla = shape_params[s1, 1]
            hlb = shape_params[s2, 1]
            for i in range(3):
                a1[i] = w_pos[s1, i] - w_rot[s1, i, 2] * hla
                a2[i] = w_pos[s1, i] + w_rot[s1, i, 2] * hla
                b1[i] = w_pos[s2, i] - w_rot[s2, i, 2] * hlb
                b2[i] = w_pos[s2, i] + w_rot[s2, i, 2] * hlb
            c1, c2 = _segment_segment(a1, a2, b1, b2)
            ok, pt, nr, pen = _sphere_sphere(c1, shape_params[s1, 0], c2, shape_params[s2, 0])
            if ok:
                pts[0] = pt
                norms[0] = nr
                pens[0] = pen
                n_new = 1
        elif k1 == KIND_CAPSULE and k2 == KIND_HALFPLANE:
            nrm = np.empty(3)
            for i in range(3):
                nrm[i] = w_rot[s2, i, 2]
            r = shape_params[s1, 0]
            hl = shape_params[s1, 1]
            for send in (-1.0, 1.0):
                ex = w_pos[s1, 0] + w_rot[s1, 0, 2] * send * hl
                ey = w_pos[s1, 1] + w_rot[s1, 1, 2] * send * hl
                ez = w_pos[s1, 2] + w_rot[s1, 2, 2] * send * hl
                d = nrm[0] * (ex - w_pos[s2, 0]) + nrm[1] * (ey - w_pos[s2, 1]) + nrm[2] * (ez - w_pos[s2, 2])
                pen = r - d
                if pen > 0.0 and n_new < 8:
                    pts[n_new, 0] = ex - nrm[0] * (r - 0.5 * pen)
                    pts[n_new, 1] = ey - nrm[1] * (r - 0.5 * pen)
                    pts[n_new, 2] = ez - nrm[2] * (r - 0.5 * pen)
                    for i in range(3):
                        norms[n_new, i] = -nrm[i]
                    pens[n_new] = pen
                    n_new += 1
        # halfplane-halfplane: ignored

        for c in range(n_new):
            nx, ny, nz = norms[c, 0], norms[c, 1], norms[c, 2]
            if flip:
                nx, ny, nz = -nx, -ny, -nz
            new_count = _emit(
                out_sa,
                out_sb,
                out_pair,
                out_point,
                out_normal,
                out_pen,
                count,
                sa,
                sb,
                p,
                pts[c, 0],
                pts[c, 1],
                pts[c, 2],
                nx,
                ny,
                nz,
                pens[c],
            )
            if new_count == count:
                return -1
            count = new_count
    return count


@njit(cache=True)
def resolve_forces(
    n_contacts,
    con_sa,
    con_sb,
    con_pair,
    con_point,
    con_normal,
    con_pen,
    shape_body,
    body_pos,
    body_quat,
    body_linvel,
    body_angvel,
    body_invmass,
    body_invinertia,
    body_friction,
    k_n,
    c_n,
    k_t,
    c_t,
    dt,
    use_anchors,
    anchor_active,
    anchor_la,
    anchor_lb,
    out_force,
    body_force,
    body_torque,
):
    """Penalty normal force + Coulomb-capped tangential force, optional pair anchors.

    F_n = max(0, k*pen - c*v_n); tangential force min(c_t*|v_t|, mu*F_n)
    opposing slip, plus (with anchors) a tangential spring on the pair's
    first-touch material points for static friction. The per-point cone clamp
    always holds.

    When dt > 0, per-contact stiffness and damping are capped by the contact's
    effective point mass divided among the bodies' live contacts, which keeps
    the explicit integration stable under arbitrarily many simultaneous
    penalty springs (statics are unaffected: forces still balance, only the
    equilibrium penetration grows). Pass dt = 0 for the raw textbook formula.

    Accumulates wrenches into body_force/body_torque and writes per-contact
    forces (force on body b).
    """
    nb = body_pos.shape[0]
    for b in range(nb):
        for i in range(3):
            body_force[b, i] = 0.0
            body_torque[b, i] = 0.0
    touched = np.zeros(anchor_active.shape[0], dtype=np.uint8)

    # contact count per body (for stiffness load sharing) and world-frame
    # inverse inertia of every dynamic body
    n_body = np.zeros(nb, dtype=np.int64)
    body_seen = np.zeros(nb, dtype=np.uint8)
    for ci in range(n_contacts):
        a = shape_body[con_sa[ci]]
        b = shape_body[con_sb[ci]]
        n_body[a] += 1
        n_body[b] += 1
        body_seen[a] = 1
        body_seen[b] = 1
    inv_inertia_w = np.zeros((nb, 3, 3))
    for b in range(nb):
        if body_seen[b] == 0 or body_invmass[b] == 0.0:
            continue
        R = _quat_to_mat(body_quat[b])
        for i in range(3):
            for j in range(3):
                s = 0.0
                for k in range(3):
                    for l in range(3):
                        s += R[i, k] * body_invinertia[b, k, l] * R[j, l]
                inv_inertia_w[b, i, j] = s

    i0 = 0
    while i0 < n_contacts:
        pair = con_pair[i0]
        i1 = i0
        while i1 < n_contacts and con_pair[i1] == pair:
            i1 += 1
        m = i1 - i0
        a = shape_body[con_sa[i0]]
        b = shape_body[con_sb[i0]]
        mu = np.sqrt(body_friction[a] * body_friction[b])

        # first pass: normal + viscous tangential force per point
        fn_sum = 0.0
        centroid = np.zeros(3)
        n_mean = np.zeros(3)
        kt_pair = k_t
        for ci in range(i0, i1):
            n = con_normal[ci]
            p = con_point[ci]
            # relative velocity of b w.r.t. a at the contact point
            rel = np.empty(3)
            ra = np.empty(3)
            rb = np.empty(3)
            for k in range(3):
                ra[k] = p[k] - body_pos[a, k]
                rb[k] = p[k] - body_pos[b, k]
            wa = body_angvel[a]
            wb = body_angvel[b]
            va = _cross(wa, ra)
            vb = _cross(wb, rb)
            for k in range(3):
                rel[k] = (body_linvel[b, k] + vb[k]) - (body_linvel[a, k] + va[k])
            vn = rel[0] * n[0] + rel[1] * n[1] + rel[2] * n[2]

            kn_eff = k_n
            cn_eff = c_n
            ct_eff = c_t
            if dt > 0.0:
                # inverse effective point mass along the normal, scaled by the
                # number of contacts sharing each body
                kappa = 0.0
                for side in range(2):
                    bod = a if side == 0 else b
                    if body_invmass[bod] == 0.0:
                        continue
                    r = ra if side == 0 else rb
                    rxn = _cross(r, n)
                    ang = 0.0
                    for i in range(3):
                        for j in range(3):
                            ang += rxn[i] * inv_inertia_w[bod, i, j] * rxn[j]
                    kappa += (body_invmass[bod] + ang) * n_body[bod]
                if kappa > 0.0:
                    k_cap = 1.0 / (dt * dt * kappa)
                    c_cap = 1.0 / (dt * kappa)
                    if k_cap < kn_eff:
                        kn_eff = k_cap
                    if c_cap < cn_eff:
                        cn_eff = c_cap
                    if c_cap < ct_eff:
                        ct_eff = c_cap
                    if k_cap < kt_pair:
                        kt_pair = k_cap

            fn = kn_eff * con_pen[ci] - cn_eff * vn
            if fn < 0.0:
                fn = 0.0
            vt = np.empty(3)
            for k in range(3):
                vt[k] = rel[k] - vn * n[k]
            vt_mag = _norm3(vt)
            ft_visc = ct_eff * vt_mag
            fmax = mu * fn
            if ft_visc > fmax:
                ft_visc = fmax
            for k in range(3):
                out_force[ci, k] = n[k] * fn
            if vt_mag > 1e-12:
                for k in range(3):
                    out_force[ci, k] -= ft_visc * vt[k] / vt_mag
            fn_sum += fn
            for k in range(3):
                centroid[k] += p[k]
                n_mean[k] += n[k]
        for k in range(3):
            centroid[k] /= m
        nm = _norm3(n_mean)
        if nm > 1e-12:
            for k in range(3):
                n_mean[k] /= nm

        # pair anchor spring (static friction)
        if use_anchors and fn_sum > 0.0:
            touched[pair] = 1
            Rma = _quat_to_mat(body_quat[a])
            Rmb = _quat_to_mat(body_quat[b])
            if anchor_active[pair] == 0:
                # world -> local on both bodies
                for k in range(3):
                    sa_ = 0.0
                    sb_ = 0.0
                    for l in range(3):
                        sa_ += Rma[l, k] * (centroid[l] - body_pos[a, l])
                        sb_ += Rmb[l, k] * (centroid[l] - body_pos[b, l])
                    anchor_la[pair, k] = sa_
                    anchor_lb[pair, k] = sb_
                anchor_active[pair] = 1
            else:
                wa_pt = np.empty(3)
                wb_pt = np.empty(3)
                for k in range(3):
                    wa_pt[k] = body_pos[a, k]
                    wb_pt[k] = body_pos[b, k]
                    for l in range(3):
                        wa_pt[k] += Rma[k, l] * anchor_la[pair, l]
                        wb_pt[k] += Rmb[k, l] * anchor_lb[pair, l]
                d = np.empty(3)
                for k in range(3):
                    d[k] = wb_pt[k] - wa_pt[k]
                dn = d[0] * n_mean[0] + d[1] * n_mean[1] + d[2] * n_mean[2]
                disp = np.empty(3)
                for k in range(3):
                    disp[k] = d[k] - dn * n_mean[k]
                disp_mag = _norm3(disp)
                d_lim = mu * fn_sum / kt_pair
                if disp_mag > d_lim and disp_mag > 1e-12:
                    # slide: keep the spring at the cone boundary
                    scale = d_lim / disp_mag
                    excess = np.empty(3)
                    for k in range(3):
                        excess[k] = disp[k] * (1.0 - scale)
                        disp[k] *= scale
                    # move both anchors toward each other by half the excess
                    for k in range(3):
                        wa_pt[k] += 0.5 * excess[k]
                        wb_pt[k] -= 0.5 * excess[k]
                    for k in range(3):
                        sa_ = 0.0
                        sb_ = 0.0
                        for l in range(3):
                            sa_ += Rma[l, k] * (wa_pt[l] - body_pos[a, l])
                            sb_ += Rmb[l, k] * (wb_pt[l] - body_pos[b, l])
                        anchor_la[pair, k] = sa_
                        anchor_lb[pair, k] = sb_
                    disp_mag = d_lim
                # distribute spring force across points, weighted by normal force
                if disp_mag > 1e-12 and fn_sum > 1e-12:
                    for ci in range(i0, i1):
                        n = con_normal[ci]
                        fn_i = 0.0
                        for k in range(3):
                            fn_i += out_force[ci, k] * n[k]
                        w = fn_i / fn_sum
                        for k in range(3):
                            out_force[ci, k] -= kt_pair * disp[k] * w

        # final per-point cone clamp, then accumulate wrenches
        for ci in range(i0, i1):
            n = con_normal[ci]
            f = out_force[ci]
            fn_i = f[0] * n[0] + f[1] * n[1] + f[2] * n[2]
            ft = np.empty(3)
            for k in range(3):
                ft[k] = f[k] - fn_i * n[k]
            ft_mag = _norm3(ft)
            fmax = mu * fn_i
            if ft_mag > fmax and ft_mag > 1e-12:
                s = fmax / ft_mag
                for k in range(3):
                    out_force[ci, k] = fn_i * n[k] + ft[k] * s
            p = con_point[ci]
            for k in range(3):
                body_force[b, k] += out_force[ci, k]
                body_force[a, k] -= out_force[ci, k]
            ra = np.empty(3)
            rb = np.empty(3)
            for k in range(3):
                ra[k] = p[k] - body_pos[a, k]
                rb[k] = p[k] - body_pos[b, k]
            tb = _cross(rb, out_force[ci])
            ta = _cross(ra, out_force[ci])
            for k in range(3):
                body_torque[b, k] += tb[k]
                body_torque[a, k] -= ta[k]
        i0 = i1

    # drop anchors for pairs that lost contact
    if use_anchors:
        for p in range(anchor_active.shape[0]):
            if anchor_active[p] == 1 and touched[p] == 0:
                anchor_active[p] = 0
    return 0


@njit(cache=True)
def kinematic_advance(
    body_kinematic,
    body_pos,
    body_quat,
    body_linvel,
    body_angvel,
    target_pos,
    target_quat,
    lin_cap,
    ang_cap,
    dt,
):
    """Move kinematic bodies toward their targets under speed caps; set velocities."""
    n = body_pos.shape[0]
    for b in range(n):
        if body_kinematic[b] == 0:
            continue
        # translation
        dx = np.empty(3)
        for i in range(3):
            dx[i] = target_pos[b, i] - body_pos[b, i]
        dist = _norm3(dx)
        max_step = lin_cap[b] * dt
        if dist > 1e-15:
            step = dist if dist <= max_step else max_step
            for i in range(3):
                mv = dx[i] / dist * step
                body_pos[b, i] += mv
                body_linvel[b, i] = mv / dt
        else:
            for i in range(3):
                body_linvel[b, i] = 0.0
        # rotation toward target via axis-angle of the relative quaternion
        q = body_quat[b]
        qt = target_quat[b]
        # relative rotation r = qt * conj(q)
        cq = np.empty(4)
        cq[0] = q[0]
        cq[1] = -q[1]
        cq[2] = -q[2]
        cq[3] = -q[3]
        r = _quat_mul(qt, cq)
        if r[0] < 0.0:
            for i in range(4):
                r[i] = -r[i]
        w = min(1.0, max(-1.0, r[0]))
        angle = 2.0 * np.arccos(w)
        if angle > 1e-12:
            s = np.sqrt(max(0.0, 1.0 - w * w))
            ax = np.empty(3)
            for i in range(3):
                ax[i] = r[i + 1] / s if s > 1e-12 else 0.0
            max_rot = ang_cap[b] * dt
            rot = angle if angle <= max_rot else max_rot
            half = 0.5 * rot
            dq = np.empty(4)
            dq[0] = np.cos(half)
            sn = np.sin(half)
            for i in range(3):
                dq[i + 1] = ax[i] * sn
            nq = _quat_mul(dq, q)
            nn = np.sqrt(nq[0] ** 2 + nq[1] ** 2 + nq[2] ** 2 + nq[3] ** 2)
            for i in range(4):
                body_quat[b, i] = nq[i] / nn
            for i in range(3):
                body_angvel[b, i] = ax[i] * rot / dt
        else:
            for i in range(3):
                body_angvel[b, i] = 0.0


@njit(cache=True)
def integrate_dynamics(
    body_kinematic,
    body_pos,
    body_quat,
    body_linvel,
    body_angvel,
    body_invmass,
    body_invinertia,
    body_force,
    body_torque,
    ext_force,
    gravity,
    dt,
):
    """Semi-implicit Euler for dynamic bodies. Returns -1, or the first non-finite body."""
    n = body_pos.shape[0]
    for b in range(n):
        if body_kinematic[b] == 1:
            continue
        im = body_invmass[b]
        for i in range(3):
            body_linvel[b, i] += ((body_force[b, i] + ext_force[b, i]) * im + gravity[i]) * dt
        # world-frame inverse inertia: R I_inv_body R^T
        R = _quat_to_mat(body_quat[b])
        tau = body_torque[b]
        # tau in body frame
        tb = np.empty(3)
        for i in range(3):
            tb[i] = R[0, i] * tau[0] + R[1, i] * tau[1] + R[2, i] * tau[2]
        dwb = np.empty(3)
        for i in range(3):
            dwb[i] = 0.0
            for j in range(3):
                dwb[i] += body_invinertia[b, i, j] * tb[j]
        for i in range(3):
            dw = R[i, 0] * dwb[0] + R[i, 1] * dwb[1] + R[i, 2] * dwb[2]
            body_angvel[b, i] += dw * dt
        for i in range(3):
            body_pos[b, i] += body_linvel[b, i] * dt
        # quaternion update from world angular velocity
        w = body_angvel[b]
        wmag = _norm3(w)
        if wmag > 1e-12:
            half = 0.5 * wmag * dt
            dq = np.empty(4)
            dq[0] = np.cos(half)
            sn = np.sin(half) / wmag
            dq[1] = w[0] * sn
            dq[2] = w[1] * sn
            dq[3] = w[2] * sn
            nq = _quat_mul(dq, body_quat[b])
            nn = np.sqrt(nq[0] ** 2 + nq[1] ** 2 + nq[2] ** 2 + nq[3] ** 2)
            for i in range(4):
                body_quat[b, i] = nq[i] / nn
        ok = True
        for i in range(3):
            if not np.isfinite(body_pos[b, i]) or not np.isfinite(body_linvel[b, i]) or not np.isfinite(body_angvel[b, i]):
                ok = False
        for i in range(4):
            if not np.isfinite(body_quat[b, i]):
                ok = False
        if not ok:
            return b
    return -1


@njit(cache=True)
def contact_query(kind_a, params_a, pos_a, rot_a, kind_b, params_b, pos_b, rot_b):
    """Maximum penetration between two free-standing shapes (-1.0 if separated).

    Used by the grasp sampler for swept-volume collision checks.
    """
    pts = np.empty((8, 3))
    norms = np.empty((8, 3))
    pens = np.empty(8)
    if kind_a == KIND_CUBOID and kind_b == KIND_CUBOID:
        n = _box_box(pos_a, rot_a, params_a, pos_b, rot_b, params_b, pts, norms, pens)
        best = -1.0
        for i in range(n):
            if pens[i] > best:
                best = pens[i]
        return best
    if kind_a == KIND_CUBOID and kind_b == KIND_SPHERE:
        ok, _, _, pen = _sphere_box(pos_b, params_b[0], pos_a, rot_a, params_a)
        return pen if ok else -1.0
    if kind_a == KIND_CUBOID and kind_b == KIND_CAPSULE:
        e1 = np.empty(3)
        e2 = np.empty(3)
        for i in range(3):
            e1[i] = pos_b[i] - rot_b[i, 2] * params_b[1]
            e2[i] = pos_b[i] + rot_b[i, 2] * params_b[1]
        t = _capsule_box_closest_t(e1, e2, pos_a, rot_a, params_a)
        cpt = np.empty(3)
        for i in range(3):
            cpt[i] = e1[i] + t * (e2[i] - e1[i])
        ok, _, _, pen = _sphere_box(cpt, params_b[0], pos_a, rot_a, params_a)
        return pen if ok else -1.0
    return -1.0
