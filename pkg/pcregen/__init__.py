# pcregen: progressive correspondence regeneration for rigid point-cloud registration

from .consistency import ConsistencyParams
from .errors import RegistrationError
from .features import FeatureSet, compute_weak_descriptor
from .geometry import CorrespondenceSet, PointCloud, RigidTransform, SpatialIndex, fit_rigid_transform
from .regeneration import AblationConfig, IterationSchedule, RegenerationResult, regenerate
from .refinement import RefinementParams, refine_pose

__version__ = "0.1.0"
