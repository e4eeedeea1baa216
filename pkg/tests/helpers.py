"""Small builders shared by the unit tests."""
from stopclock.cohort import Unit
from stopclock.pbp import GameInstant, InstantKind


def make_game(kinds, margins, game_id="g", teams=None):
    """Instants from parallel lists of kind codes and home margins.

    Kind codes: ``p`` possession, ``T`` home timeout, ``t`` away timeout,
    ``o`` official timeout, ``e`` period end.
    """
    out = []
    for k, (code, m) in enumerate(zip(kinds, margins)):
        if code == "p":
            kind, team, official = InstantKind.POSSESSION, (teams[k] if teams else "home"), False
        elif code in "Tt":
            kind, team, official = InstantKind.TIMEOUT, "home" if code == "T" else "away", False
        elif code == "o":
            kind, team, official = InstantKind.TIMEOUT, None, True
        else:
            kind, team, official = InstantKind.PERIOD_END, None, False
        out.append(GameInstant(game_id, k, kind, 1, float(k), int(m), team, official))
    return out


def unit(game_id="g", t=0, dpre=0, a=0, q=1, p=0, s=0.0, y=0.0, side="home"):
    return Unit(game_id=game_id, t=t, side=side, a=a, q=q, p=p, s=s, dpre_num=dpre, y=y)


def brute_force_by_cardinality(cost, ok):
    """Exact search over all injections of rows into columns.

    Dynamic programme over the set of used columns, so every partial
    injection is accounted for.  Returns ``{k: minimal total cost among
    matchings with k pairs}`` for every attainable ``k``.  ``cost`` should
    hold integers so that totals compare exactly.
    """
    n_t = len(cost)
    n_c = len(cost[0]) if n_t else 0
    dp = {0: 0}
    for i in range(n_t):
        nxt = dict(dp)
        for used, total in dp.items():
            for j in range(n_c):
                if ok[i][j] and not used >> j & 1:
                    key, val = used | 1 << j, total + int(cost[i][j])
                    if val < nxt.get(key, val + 1):
                        nxt[key] = val
        dp = nxt
    best = {}
    for used, total in dp.items():
        k = bin(used).count("1")
        if total < best.get(k, total + 1):
            best[k] = total
    return best


def random_instance(rng, max_t=8, max_c=8, lam=2, game_id="g"):
    """Treated and control units of one game with distances on a 0.001 grid."""
    n_t = int(rng.integers(1, max_t + 1))
    n_c = int(rng.integers(0, max_c + 1))
    ts = rng.choice(80, size=n_t + n_c, replace=False)
    dpre = rng.integers(0, 2, size=n_t + n_c)
    treated = [unit(game_id, int(ts[k]), dpre=int(dpre[k]), a=1) for k in range(n_t)]
    controls = [unit(game_id, int(ts[n_t + k]), dpre=int(dpre[n_t + k])) for k in range(n_c)]
    milli = rng.integers(0, 1001, size=(n_t, n_c))
    return treated, controls, milli


def random_dag(rng, n_nodes=6, p_edge=0.4):
    """Random DAG over ``n0..n{k}``: edges only go from lower to higher index
    in a shuffled order."""
    names = [f"n{k}" for k in range(n_nodes)]
    order = list(rng.permutation(n_nodes))
    edges = [(names[order[i]], names[order[j]])
             for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < p_edge]
    return names, edges


def backdoor_oracle(nodes, edges, treatment, outcome, given):
    """Back-door criterion via networkx d-separation on the graph with the
    treatment's outgoing edges removed."""
    import networkx as nx

    g = nx.DiGraph()
    g.add_nodes_from(nodes)
    g.add_edges_from(edges)
    if nx.descendants(g, treatment) & set(given):
        return False
    cut = g.copy()
    cut.remove_edges_from(list(g.out_edges(treatment)))
    return nx.is_d_separator(cut, {treatment}, {outcome}, set(given))
