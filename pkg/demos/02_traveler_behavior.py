"""Sample travelers, look at their choice probabilities and simulate a few days of history."""

import numpy as np

from routecomply.behavior import choice_matrix, generate_history, sample_population
from routecomply.harness import Config, build_network
from routecomply.netcore import PathCatalog

cfg = Config()
net = build_network(cfg)
catalog = PathCatalog.build(net, cfg.demand.demands(), cfg.behavior.candidates)
times = net.latency(np.zeros(net.n_edges))

pop = sample_population(catalog.demands, 3, seed=1)
np.set_printoptions(precision=3, suppress=True)
for t in pop[:3]:
    print(f"traveler {t.id}: theta={t.theta}")
    # row k: distribution over candidates when candidate k is recommended
    print(choice_matrix(t, net, catalog.paths[t.demand], times))

hist = generate_history(net, catalog, days=5, n_per_demand=10, seed=2)
labels = np.array([r.label for r in hist.records])
print(f"{len(hist)} observations, compliance rate {labels.mean():.3f}")
