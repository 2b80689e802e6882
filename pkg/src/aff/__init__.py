"""Irregular-token vision backbone: space-filling-curve clustering, neighbourhood
attention, learnable adaptive downsampling and a small reverse-mode autodiff."""

from .clustering import (ClusterAssignment, TokenSet, balanced_cluster, centroids,
                         no_anchor_cluster, ratio_key, silhouette)
from .downsample import (GridPrior, downsample, grid_prior, importance_scores, local_stride,
                         merge_neighborhoods, select_centers)
from .model import ModelConfig, StageConfig, aff_mini, aff_nano, classify, forward, init_params
from .neighborhood import (NeighborTable, build_neighbor_table, expand_rel, nearest_clusters,
                           shepard_interpolate)
from .sfc import (AnchorGrid, AnchorOrdering, build_anchor_grid, order_hilbert, order_peano,
                  order_scanline, quantize)

__version__ = "0.1.0"
