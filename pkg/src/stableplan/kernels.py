"""Compiled inner loops.

Built-in models describe their dynamics as ``(kind, params)`` where
``params`` is a flat float64 vector.  A single switch in :func:`transition`
dispatches on ``kind``; this keeps every jitted function cacheable (no
first-class function arguments) so worker processes do not recompile.

Uniform draws are consumed in a fixed order: node by node, then action,
then sample, then the model's own per-step uniforms.  The pure-Python
planners consume the same sequence, which is what lets the tests demand
bit-identical output from both paths.
"""

import numpy as np
from numba import njit

QUEUE = 0
WALK = 1
FINITE = 2
CHAIN = 3

OK = 0
BUDGET = 1
CONTRACT = 2

_FNV_OFFSET = np.uint64(14695981039346656037)
_FNV_PRIME = np.uint64(1099511628211)


@njit(cache=True)
def transition(kind, params, state, action, u, out):
    """Write the next state into ``out`` and return the reward."""
    d = state.shape[0]
    if kind == QUEUE:
        # params: [n, arrival(n), service(n), scale]
        n = int(params[0])
        total = 0.0
        for i in range(d):
            out[i] = state[i]
            total += state[i]
        reward = params[1 + 2 * n] / (1.0 + total)
        if state[action] > 0.0 and u[0] < params[1 + n + action]:
            out[action] -= 1.0
        for i in range(n):
            if u[1 + i] < params[1 + i]:
                out[i] += 1.0
        return reward
    elif kind == WALK:
        s = state[0]
        nxt = s + 1.0 if u[0] < params[0] else s - 1.0
        out[0] = nxt if nxt > 0.0 else 0.0
        return 1.0 / (1.0 + s)
    elif kind == FINITE:
        # params: [n_states, n_actions, cumulative P (S*A*S), R (S*A)]
        ns = int(params[0])
        na = int(params[1])
        i = int(state[0])
        off = 2 + (i * na + action) * ns
        j = 0
        while j < ns - 1 and u[0] >= params[off + j]:
            j += 1
        out[0] = float(j)
        return params[2 + ns * na * ns + i * na + action]
    else:
        # CHAIN params: [stride, n_rewards, rewards...]
        stride = params[0]
        nr = int(params[1])
        for i in range(d):
            out[i] = state[i] + stride
        idx = int(state[0]) % nr
        return params[2 + idx]


@njit(cache=True)
def transition_batch(kind, params, states, actions, uniforms):
    n, d = states.shape
    nxt = np.empty((n, d))
    rewards = np.empty(n)
    for i in range(n):
        rewards[i] = transition(kind, params, states[i], actions[i], uniforms[i], nxt[i])
    return nxt, rewards


@njit(cache=True)
def _hash_key(k):
    h = _FNV_OFFSET
    for x in k:
        h ^= np.uint64(x)
        h *= _FNV_PRIME
    return h


@njit(cache=True)
def _find(table, keys, k):
    """Return (slot or -1, probe position) for grid index vector ``k``."""
    mask = np.uint64(table.shape[0] - 1)
    pos = _hash_key(k) & mask
    while True:
        slot = table[pos]
        if slot < 0:
            return -1, pos
        same = True
        for j in range(k.shape[0]):
            if keys[slot, j] != k[j]:
                same = False
                break
        if same:
            return slot, pos
        pos = (pos + np.uint64(1)) & mask


@njit(cache=True)
def _rehash(keys, n_slots, size):
    table = np.full(size, -1, dtype=np.int64)
    # slot 0 is the off-grid root scratch slot and never indexed
    for s in range(1, n_slots):
        _, pos = _find(table, keys, keys[s])
        table[pos] = s
    return table


@njit(cache=True)
def _grow_rows(arr, rows):
    out = np.empty((rows,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def grid_query(kind, params, n_u, n_actions, width, horizon, gamma, eps, r_max,
               root, rng, cap, coords, keys, child, rew, expanded, stamp, table,
               n_slots, stamp_ctr):
    """Expand and back up one memoized epsilon-grid look-ahead tree.

    Returns ``(status, q, fresh, expansions, <cache arrays...>, n_slots,
    stamp_ctr)``.  Cache arrays may be reallocated, so callers must keep
    the returned ones.
    """
    d = root.shape[0]
    A = n_actions
    C = width
    q_root = np.zeros(A)
    fresh = 0
    expansions = 0
    u = np.empty(n_u)
    tmp = np.empty(d)
    kbuf = np.empty(d, dtype=np.int64)

    # root: shares the cache only when it already lies on the grid
    on_grid = True
    for j in range(d):
        kbuf[j] = np.int64(np.rint(root[j] / eps))
        if kbuf[j] * eps != root[j]:
            on_grid = False
    if on_grid:
        slot, pos = _find(table, keys, kbuf)
        if slot < 0:
            if n_slots >= coords.shape[0]:
                rows = 2 * coords.shape[0]
                coords = _grow_rows(coords, rows)
                keys = _grow_rows(keys, rows)
                child = _grow_rows(child, rows)
                rew = _grow_rows(rew, rows)
                expanded = _grow_rows(expanded, rows)
                stamp = _grow_rows(stamp, rows)
            slot = n_slots
            n_slots += 1
            keys[slot] = kbuf
            for j in range(d):
                coords[slot, j] = kbuf[j] * eps
            expanded[slot] = False
            stamp[slot] = 0
            table[pos] = slot
            if 2 * n_slots > table.shape[0]:
                table = _rehash(keys, n_slots, 2 * table.shape[0])
        root_slot = slot
    else:
        root_slot = 0
        coords[0] = root
        expanded[0] = False

    front = np.empty(64, dtype=np.int64)
    fstart = np.zeros(horizon + 1, dtype=np.int64)
    front[0] = root_slot
    n_front = 1
    fstart[0] = 0
    fstart[1] = 1

    for h in range(horizon):
        stamp_ctr += 1
        for i in range(fstart[h], fstart[h + 1]):
            x = front[i]
            if not expanded[x]:
                if fresh + A * C > cap:
                    return (BUDGET, q_root, fresh, expansions, coords, keys, child, rew,
                            expanded, stamp, table, n_slots, stamp_ctr)
                if n_slots + A * C > coords.shape[0]:
                    rows = 2 * coords.shape[0]
                    while rows < n_slots + A * C:
                        rows *= 2
                    coords = _grow_rows(coords, rows)
                    keys = _grow_rows(keys, rows)
                    child = _grow_rows(child, rows)
                    rew = _grow_rows(rew, rows)
                    expanded = _grow_rows(expanded, rows)
                    stamp = _grow_rows(stamp, rows)
                if 2 * (n_slots + A * C) > table.shape[0]:
                    size = table.shape[0]
                    while 2 * (n_slots + A * C) > size:
                        size *= 2
                    table = _rehash(keys, n_slots, size)
                for a in range(A):
                    for c in range(C):
                        for j in range(n_u):
                            u[j] = rng.random()
                        r = transition(kind, params, coords[x], a, u, tmp)
                        fresh += 1
                        if not (r >= 0.0 and r <= r_max):
                            return (CONTRACT, q_root, fresh, expansions, coords, keys, child,
                                    rew, expanded, stamp, table, n_slots, stamp_ctr)
                        for j in range(d):
                            kbuf[j] = np.int64(np.rint(tmp[j] / eps))
                        y, pos = _find(table, keys, kbuf)
                        if y < 0:
                            y = n_slots
                            n_slots += 1
                            keys[y] = kbuf
                            for j in range(d):
                                coords[y, j] = kbuf[j] * eps
                            expanded[y] = False
                            stamp[y] = 0
                            table[pos] = y
                        child[x, a, c] = y
                        rew[x, a, c] = r
                expanded[x] = True
                expansions += 1
            if h + 1 < horizon:
                for a in range(A):
                    for c in range(C):
                        y = child[x, a, c]
                        if stamp[y] != stamp_ctr:
                            stamp[y] = stamp_ctr
                            if n_front >= front.shape[0]:
                                front = _grow_rows(front, 2 * front.shape[0])
                            front[n_front] = y
                            n_front += 1
        if h + 1 < horizon:
            fstart[h + 2] = n_front

    # backup: vals holds V^{h+1} for the level below the one being computed
    vals = np.zeros(n_slots)
    nvals = np.zeros(n_slots)
    for h in range(horizon - 1, -1, -1):
        for i in range(fstart[h], fstart[h + 1]):
            x = front[i]
            best = -np.inf
            for a in range(A):
                acc = 0.0
                for c in range(C):
                    if h == horizon - 1:
                        acc += rew[x, a, c]
                    else:
                        acc += rew[x, a, c] + gamma * vals[child[x, a, c]]
                qa = acc / C
                if h == 0:
                    q_root[a] = qa
                if qa > best:
                    best = qa
            nvals[x] = best
        vals, nvals = nvals, vals

    if root_slot == 0:
        expanded[0] = False
    return (OK, q_root, fresh, expansions, coords, keys, child, rew, expanded, stamp,
            table, n_slots, stamp_ctr)
