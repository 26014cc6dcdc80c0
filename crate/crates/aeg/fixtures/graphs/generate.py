"""Writes every graph on at most 8 nodes with 2 or 3 connected components,
one per isomorphism class, built from the networkx graph atlas."""
import networkx as nx

connected = [g for g in nx.graph_atlas_g() if g.number_of_nodes() > 0 and nx.is_connected(g)]
connected.sort(key=lambda g: g.number_of_nodes())
size = [g.number_of_nodes() for g in connected]


def combos(start, left, budget):
    """Non-decreasing index tuples of `left` graphs fitting in `budget` nodes."""
    if left == 0:
        yield []
        return
    for j in range(start, len(connected)):
        if size[j] * left > budget:
            break
        for rest in combos(j, left - 1, budget - size[j]):
            yield [j] + rest


lines = []
for c in (2, 3):
    for combo in combos(0, c, 8):
        g = nx.disjoint_union_all([connected[j] for j in combo])
        edges = " ".join(f"{u}-{v}" for u, v in sorted(g.edges()))
        lines.append(f"{g.number_of_nodes()} {c} {edges}".rstrip())
with open("disconnected_n8.txt", "w") as f:
    f.write("# nodes components edges...\n")
    f.write("\n".join(lines) + "\n")
print(len(lines))
