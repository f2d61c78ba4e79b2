"""Adversarial multimodal deformable image registration"""
from reggan.baseline import (  # noqa: F401
    BsplineTransform,
    MetricsTrace,
    baseline_register,
    fit_control_points,
    to_field,
)
from reggan.config import RunConfig, load_config, preset_config  # noqa: F401
from reggan.constants import (  # noqa: F401
    METHOD_ORDER,
    BorderPolicy,
    ConfigError,
    DeformationKind,
    DimensionMismatchError,
    DivergenceError,
    ImageFormatError,
    Method,
    MissingCheckpointError,
    Preset,
    ReportFormat,
)
from reggan.deformation import (  # noqa: F401
    DeformationSpec,
    compose,
    err_def,
    invert,
    sample_spec,
    simulate,
)
from reggan.harness import (  # noqa: F401
    AggregateTable,
    EvaluationArtifacts,
    MetricsReport,
    aggregate,
    evaluate_case,
    evaluate_cases,
    render_report,
)
from reggan.imaging import (  # noqa: F401
    load_field,
    load_image,
    save_field,
    save_image,
    warp,
    warp_gradient,
)
from reggan.losses import (  # noqa: F401
    FeatureNet,
    LossWeights,
    adv_loss_d,
    adv_loss_g,
    content_loss,
    cycle_loss,
    feature_loss,
    get_feature_net,
    soft_nmi,
    ssim_loss,
    total_objective,
)
from reggan.metrics import dice, hd95, mad, mse, nmi, ssim, surface_distances  # noqa: F401
from reggan.networks import (  # noqa: F401
    Discriminator,
    Generator,
    GeneratorOutput,
    NetworkParams,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    load_checkpoint,
    save_checkpoint,
)
from reggan.synthdata import (  # noqa: F401
    RegistrationCase,
    build_dataset,
    make_phantom,
    read_dataset,
    to_modality_b,
    write_dataset,
)
from reggan.training import (  # noqa: F401
    AdamState,
    TrainConfig,
    TrainLog,
    adam_step,
    pretrain_generator,
    register,
    split_cases,
    train_cyclegan,
)
