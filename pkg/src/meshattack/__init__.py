"""Black-box adversarial attacks on mesh classifiers via random-walk imitating networks."""
from .attack import AttackConfig, AttackResult, attack, random_perturbation, targeted_attack
from .classifiers import (FaceVictim, LookupVictim, TrainConfig, VictimHandle, WalkVictim, agreement, query_all,
                          train_face_victim, train_imitator, train_victim)
from .evaluation import EvalReport, HeatMap, accuracy, cross_attack_matrix, evaluate, heatmap, l2_distortion
from .mesh import Mesh, load_mesh, normalize_unit_sphere, save_mesh
from .network import Arch, ImitatorParams, backward, forward, init_params, kld
from .shapes import Dataset, LabeledMesh, ShapeSpec, generate_shape, make_dataset
from .walks import Walk, extract_walk

__version__ = "0.1.0"
