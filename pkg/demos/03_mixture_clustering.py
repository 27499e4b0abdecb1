"""Mixture matching: graphs of three classes, clustered by their matching scores.

With a node-merged universe each class owns its own anchors, so graphs of
different classes share nothing and spectral clustering separates them. A
feature-merged universe reuses anchors across classes and the clusters blur.
"""
import numpy as np

from universe_match import (FEATURE_MERGED, NODE_MERGED, GenConfig, TrainConfig, UniverseSpec, generate,
                            mixture_pipeline, train)
from universe_match.affinity import UniverseMetric
from universe_match.datagen import derive_pairwise_gt
from universe_match.metrics import accuracy, clustering_metrics, f1

data = generate(GenConfig(class_count=3, anchors_per_class=[6], feature_dim=64, graphs_per_class=30,
                          inlier_drop_range=(0, 1), outlier_count_range=(1, 1), seed=2))
train_set, held = data.split(0.2, seed=2)
graphs = held.graphs
classes = [g.class_id for g in graphs]

for mode in (NODE_MERGED, FEATURE_MERGED):
    spec = UniverseSpec.for_classes(data.anchors_per_class, mode)
    metric, _ = train(UniverseMetric.init(64, spec, seed=2), data,
                      TrainConfig(epochs=15, pairs_per_epoch=512, sampling="half-mixed", universe=spec, seed=2))
    result = mixture_pipeline(graphs, metric, k=3, seed=2)
    m = len(graphs)
    pf, pa = np.zeros((m, m)), np.zeros((m, m))
    for (a, b), x in result.all_matchings.items():
        gt = derive_pairwise_gt(graphs[a], graphs[b])
        pf[a, b] = pf[b, a] = f1(x, gt)[0]
        pa[a, b] = pa[b, a] = accuracy(x, gt)
    s = clustering_metrics(result.clusters, classes, pf, pa)
    print(f"{mode:15s} n_u={spec.n_u:2d}  CP {s.cp:.3f}  RI {s.ri:.3f}  CA {s.ca:.3f}  F1C {s.f1c:.3f}")
    print("  cluster labels by class:", [result.clusters.labels[np.array(classes) == c].tolist() for c in range(3)])
