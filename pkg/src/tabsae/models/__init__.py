from .base import TabularClassifier, load_checkpoint, save_checkpoint
from .mamba import MambaAttentionClassifier, MambaConfig, kernel_eval
from .pfn import PFNConfig, PFNModel, TaskPrior, meta_train, pfn_predict, sample_task
from .tab_transformer import TabTransformerClassifier, TabTransformerConfig

MODEL_REGISTRY = {
    "mamba_attention": MambaAttentionClassifier,
    "tab_transformer": TabTransformerClassifier,
    "pfn": PFNModel,
}

__all__ = [
    "MODEL_REGISTRY",
    "MambaAttentionClassifier",
    "MambaConfig",
    "PFNConfig",
    "PFNModel",
    "TabTransformerClassifier",
    "TabTransformerConfig",
    "TabularClassifier",
    "TaskPrior",
    "kernel_eval",
    "load_checkpoint",
    "meta_train",
    "pfn_predict",
    "sample_task",
    "save_checkpoint",
]
