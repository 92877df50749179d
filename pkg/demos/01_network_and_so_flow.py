"""Build the default 4x4 grid, solve the system-optimal flow and derive occupancy targets."""

import numpy as np

from routecomply.harness import Config, build_network
from routecomply.netcore import PathCatalog, bpr_time, total_system_time
from routecomply.soflow import occupancy_targets, solve_so

cfg = Config()
net = build_network(cfg)
print(f"{len(net.nodes)} nodes, {net.n_edges} directed edges")

e = net.edges[0]
print(f"edge 0: t0={e.free_flow_time:.2f} s, capacity={e.capacity:.3f} veh/s, t(capacity)={bpr_time(e, e.capacity):.2f} s")

demands = cfg.demand.demands()
catalog = PathCatalog.build(net, demands, cfg.behavior.candidates)
for d, paths in list(zip(demands, catalog.paths))[:2]:
    print(f"OD {d.origin}->{d.destination}: {[p.edge_ids for p in paths]}")

sol = solve_so(net, demands, catalog.paths)
print(f"SO total time {sol.objective:.3f} after {sol.iterations} iterations, gap {sol.gap:.1e}")

# selfish-ish reference: everyone on the free-flow shortest path
aon = np.zeros(net.n_edges)
for d, paths in zip(demands, catalog.paths):
    aon[list(paths[0].edge_ids)] += d.rate
print(f"all on shortest path: {total_system_time(net, aon):.3f}")

L = occupancy_targets(net, sol.edge_flows)
top = np.argsort(L)[::-1][:5]
print("busiest edges by target occupancy:", [(int(i), round(float(L[i]), 2)) for i in top])
