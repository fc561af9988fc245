# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode simulation.

Must stay operation-for-operation identical to ``_pykernels`` so that both
backends produce bitwise-equal trajectories.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _draw(uint64_t key, uint64_t t) noexcept nogil:
    cdef uint64_t z = key + (t + 1) * GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline int _orient(double ax, double ay, double bx, double by,
                        double cx, double cy) noexcept nogil:
    cdef double c = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if c > 0.0:
        return 1
    if c < 0.0:
        return -1
    return 0


cdef inline bint _on_box(double ax, double ay, double bx, double by,
                         double cx, double cy) noexcept nogil:
    return (min(ax, bx) <= cx <= max(ax, bx)) and (min(ay, by) <= cy <= max(ay, by))


cdef inline bint _crosses(double px, double py, double qx, double qy,
                          double ax, double ay, double bx, double by) noexcept nogil:
    cdef int d1 = _orient(ax, ay, bx, by, px, py)
    cdef int d2 = _orient(ax, ay, bx, by, qx, qy)
    cdef int d3 = _orient(px, py, qx, qy, ax, ay)
    cdef int d4 = _orient(px, py, qx, qy, bx, by)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True
    if d1 == 0 and _on_box(ax, ay, bx, by, px, py):
        return True
    if d2 == 0 and _on_box(ax, ay, bx, by, qx, qy):
        return True
    if d3 == 0 and _on_box(px, py, qx, qy, ax, ay):
        return True
    if d4 == 0 and _on_box(px, py, qx, qy, bx, by):
        return True
    return False


cdef inline bint _blocked(double x, double y, double nx, double ny,
                          const double[:, ::1] walls, double width,
                          double height) noexcept nogil:
    cdef Py_ssize_t i
    if nx < 0.0 or nx > width or ny < 0.0 or ny > height:
        return True
    for i in range(walls.shape[0]):
        if _crosses(x, y, nx, ny, walls[i, 0], walls[i, 1], walls[i, 2], walls[i, 3]):
            return True
    return False


cdef inline int _zone_hit(double x, double y, double nx, double ny,
                          const double[:, ::1] zones) noexcept nogil:
    cdef Py_ssize_t i
    cdef double ux = nx - x
    cdef double uy = ny - y
    cdef double den = ux * ux + uy * uy
    cdef double t, px, py, ex, ey
    for i in range(zones.shape[0]):
        t = ((zones[i, 0] - x) * ux + (zones[i, 1] - y) * uy) / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        px = x + t * ux
        py = y + t * uy
        ex = zones[i, 0] - px
        ey = zones[i, 1] - py
        if ex * ex + ey * ey <= zones[i, 2] * zones[i, 2]:
            return <int>i
    return -1


def step(const double[:, ::1] walls, const double[:, ::1] zones, double width,
         double height, double x, double y, double ddx, double ddy):
    """One move; returns (x', y', zone index or -1)."""
    cdef double nx = x + ddx
    cdef double ny = y + ddy
    if _blocked(x, y, nx, ny, walls, width, height):
        return x, y, -1
    return nx, ny, _zone_hit(x, y, nx, ny, zones)


def simulate_episode(const double[:, ::1] walls, const double[:, ::1] zones,
                     double width, double height, const double[::1] dx,
                     const double[::1] dy, double x0, double y0,
                     uint64_t key, Py_ssize_t max_len):
    """Roll out one episode; returns (xs, ys, actions, zone index or -1)."""
    xs_arr = np.empty(max_len + 1, dtype=np.float64)
    ys_arr = np.empty(max_len + 1, dtype=np.float64)
    acts_arr = np.empty(max_len, dtype=np.int64)
    cdef double[::1] xs = xs_arr
    cdef double[::1] ys = ys_arr
    cdef int64_t[::1] acts = acts_arr
    cdef double x = x0, y = y0, nx, ny
    cdef Py_ssize_t t, n = 0
    cdef int a, zone = -1
    xs[0] = x
    ys[0] = y
    with nogil:
        for t in range(max_len):
            a = <int>(_draw(key, t) % 360)
            acts[t] = a
            nx = x + dx[a]
            ny = y + dy[a]
            n = t + 1
            if not _blocked(x, y, nx, ny, walls, width, height):
                zone = _zone_hit(x, y, nx, ny, zones)
                x = nx
                y = ny
            xs[n] = x
            ys[n] = y
            if zone >= 0:
                break
    return xs_arr[:n + 1], ys_arr[:n + 1], acts_arr[:n], zone


def hitting_times(const double[:, ::1] walls, const double[:, ::1] zones,
                  double width, double height, const double[::1] dx,
                  const double[::1] dy, const double[:, ::1] starts,
                  const uint64_t[::1] keys, Py_ssize_t max_len):
    """Episode lengths and terminal zone (-1 if truncated) for many rollouts."""
    cdef Py_ssize_t n = starts.shape[0]
    steps_arr = np.empty(n, dtype=np.int64)
    zone_arr = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] steps = steps_arr
    cdef int64_t[::1] zone_out = zone_arr
    cdef Py_ssize_t i, t, length
    cdef double x, y, nx, ny
    cdef int a, zone
    with nogil:
        for i in range(n):
            x = starts[i, 0]
            y = starts[i, 1]
            zone = -1
            length = max_len
            for t in range(max_len):
                a = <int>(_draw(keys[i], t) % 360)
                nx = x + dx[a]
                ny = y + dy[a]
                if not _blocked(x, y, nx, ny, walls, width, height):
                    zone = _zone_hit(x, y, nx, ny, zones)
                    x = nx
                    y = ny
                    if zone >= 0:
                        length = t + 1
                        break
            steps[i] = length
            zone_out[i] = zone
    return steps_arr, zone_arr
