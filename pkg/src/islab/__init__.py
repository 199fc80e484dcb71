"""Instance similarity learning on desk-scale data.

GAN-mined positive sets drive a memory-bank contrastive loss; the package
also ships toy manifolds, a CIFAR-10 reader and the usual evaluation
protocols (weighted kNN, linear probe, mined-positive precision).
"""

from .config import RunConfig
from .data import AugmentSpec, Dataset, augment, gen_manifold, load_cifar10
from .evaluation import EvalReport, linear_probe, mining_precision, weighted_knn
from .gan import GanConfig, GanPair, gan_loss, init_gan, train_gan
from .losses import loss_l1, loss_l2, prob_row, total_loss
from .mining import enlarge, knn_neighborhood, mine_all, select_optimal
from .nn import Net, build_mlp, l2_normalize
from .pipeline import run_eval, run_sweep, run_train
from .similarity import MemoryBank, SimilarityState, init_identity, sample_triplet

__version__ = "0.1.0"
