"""Fixed-point inference and post-training quantization for MobileNetV2 face detectors."""

__version__ = "0.1.0"

from .detection import (  # noqa: E402
    Anchor,
    AnchorSet,
    BBox,
    Detection,
    HeadMap,
    RegressionTarget,
    decode_box,
    default_anchors,
    encode_box,
    extract_detections,
    iou,
    multi_scale_detect,
    nms,
)
from .estimators import FaceDetector, QFormatQuantizer  # noqa: E402
from .fixedpoint import QFormat, QScalar, bits_for_range, dequantize, qmac, quantize  # noqa: E402
from .model import (  # noqa: E402
    ModelConfig,
    ModelGraph,
    build_detector,
    cast_storage,
    load_model,
    parameter_count,
    save_model,
    storage_size,
)
from .quantizer import (  # noqa: E402
    ActivationProfile,
    QuantPlan,
    plan_quantization,
    profile_activations,
    quantize_model,
)
