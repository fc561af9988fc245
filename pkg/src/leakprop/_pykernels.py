"""Pure-Python/numpy fallback for the compiled simulation kernels.

Same arithmetic in the same order as ``_kernels.pyx``; results are bitwise
equal. ``hitting_times`` is vectorized across rollouts.
"""

import numpy as np

from leakprop import _rng


def _orient(ax, ay, bx, by, cx, cy):
    c = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return 1 if c > 0.0 else (-1 if c < 0.0 else 0)


def _on_box(ax, ay, bx, by, cx, cy):
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


def _crosses(px, py, qx, qy, ax, ay, bx, by):
    d1 = _orient(ax, ay, bx, by, px, py)
    d2 = _orient(ax, ay, bx, by, qx, qy)
    d3 = _orient(px, py, qx, qy, ax, ay)
    d4 = _orient(px, py, qx, qy, bx, by)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True
    return ((d1 == 0 and _on_box(ax, ay, bx, by, px, py))
            or (d2 == 0 and _on_box(ax, ay, bx, by, qx, qy))
            or (d3 == 0 and _on_box(px, py, qx, qy, ax, ay))
            or (d4 == 0 and _on_box(px, py, qx, qy, bx, by)))


def _blocked(x, y, nx, ny, walls, width, height):
    if nx < 0.0 or nx > width or ny < 0.0 or ny > height:
        return True
    for ax, ay, bx, by in walls:
        if _crosses(x, y, nx, ny, ax, ay, bx, by):
            return True
    return False


def _zone_hit(x, y, nx, ny, zones):
    ux = nx - x
    uy = ny - y
    den = ux * ux + uy * uy
    for i, (cx, cy, r) in enumerate(zones):
        t = ((cx - x) * ux + (cy - y) * uy) / den
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        ex = cx - (x + t * ux)
        ey = cy - (y + t * uy)
        if ex * ex + ey * ey <= r * r:
            return i
    return -1


def step(walls, zones, width, height, x, y, ddx, ddy):
    nx = x + ddx
    ny = y + ddy
    walls = [tuple(map(float, w)) for w in walls]
    zones = [tuple(map(float, z)) for z in zones]
    if _blocked(x, y, nx, ny, walls, width, height):
        return x, y, -1
    return nx, ny, _zone_hit(x, y, nx, ny, zones)


def simulate_episode(walls, zones, width, height, dx, dy, x0, y0, key, max_len):
    walls = [tuple(map(float, w)) for w in walls]
    zones = [tuple(map(float, z)) for z in zones]
    dx = dx.tolist()
    dy = dy.tolist()
    acts = _rng.actions(key, max_len)
    x, y = float(x0), float(y0)
    xs, ys = [x], [y]
    zone = -1
    for a in acts.tolist():
        nx = x + dx[a]
        ny = y + dy[a]
        if not _blocked(x, y, nx, ny, walls, width, height):
            zone = _zone_hit(x, y, nx, ny, zones)
            x, y = nx, ny
        xs.append(x)
        ys.append(y)
        if zone >= 0:
            break
    n = len(xs) - 1
    return np.array(xs), np.array(ys), acts[:n].copy(), zone


def _orient_v(ax, ay, bx, by, cx, cy):
    return np.sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def _on_box_v(ax, ay, bx, by, cx, cy):
    return ((np.minimum(ax, bx) <= cx) & (cx <= np.maximum(ax, bx))
            & (np.minimum(ay, by) <= cy) & (cy <= np.maximum(ay, by)))


def _blocked_v(x, y, nx, ny, walls, width, height):
    out = (nx < 0.0) | (nx > width) | (ny < 0.0) | (ny > height)
    for ax, ay, bx, by in walls:
        d1 = _orient_v(ax, ay, bx, by, x, y)
        d2 = _orient_v(ax, ay, bx, by, nx, ny)
        d3 = _orient_v(x, y, nx, ny, ax, ay)
        d4 = _orient_v(x, y, nx, ny, bx, by)
        out |= (d1 * d2 < 0) & (d3 * d4 < 0)
        out |= (d1 == 0) & _on_box_v(ax, ay, bx, by, x, y)
        out |= (d2 == 0) & _on_box_v(ax, ay, bx, by, nx, ny)
        out |= (d3 == 0) & _on_box_v(x, y, nx, ny, ax, ay)
        out |= (d4 == 0) & _on_box_v(x, y, nx, ny, bx, by)
    return out


def _zone_hit_v(x, y, nx, ny, zones):
    ux = nx - x
    uy = ny - y
    den = ux * ux + uy * uy
    hit = np.full(x.shape, -1, dtype=np.int64)
    for i in range(len(zones) - 1, -1, -1):
        cx, cy, r = zones[i]
        t = np.clip(((cx - x) * ux + (cy - y) * uy) / den, 0.0, 1.0)
        ex = cx - (x + t * ux)
        ey = cy - (y + t * uy)
        hit[ex * ex + ey * ey <= r * r] = i
    return hit


def hitting_times(walls, zones, width, height, dx, dy, starts, keys, max_len):
    walls = [tuple(map(float, w)) for w in walls]
    zones = [tuple(map(float, z)) for z in zones]
    n = len(starts)
    steps = np.full(n, max_len, dtype=np.int64)
    zone_out = np.full(n, -1, dtype=np.int64)
    idx = np.arange(n)
    x = np.array(starts[:, 0], dtype=np.float64)
    y = np.array(starts[:, 1], dtype=np.float64)
    lane_keys = np.asarray(keys, dtype=np.uint64)
    for t in range(max_len):
        if idx.size == 0:
            break
        with np.errstate(over="ignore"):
            z = lane_keys + np.uint64(t + 1) * np.uint64(_rng.GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        a = (z % np.uint64(360)).astype(np.int64)
        nx = x + dx[a]
        ny = y + dy[a]
        moved = ~_blocked_v(x, y, nx, ny, walls, width, height)
        hit = np.where(moved, _zone_hit_v(x, y, nx, ny, zones), -1)
        x = np.where(moved, nx, x)
        y = np.where(moved, ny, y)
        done = hit >= 0
        if done.any():
            steps[idx[done]] = t + 1
            zone_out[idx[done]] = hit[done]
            keep = ~done
            idx, x, y, lane_keys = idx[keep], x[keep], y[keep], lane_keys[keep]
    return steps, zone_out
