from braillespeech.pipeline_cli.checkpoint import load_checkpoint, save_checkpoint
from braillespeech.pipeline_cli.config import JointConfig, RunConfig, load_config
from braillespeech.pipeline_cli.pipeline import evaluate, finetune_joint, infer, joint_train, load_run, pretrain, sweep

__all__ = [
    "JointConfig", "RunConfig", "evaluate", "finetune_joint", "infer", "joint_train", "load_checkpoint",
    "load_config", "load_run", "pretrain", "save_checkpoint", "sweep",
]
