"""Offline multi-agent RL with a joint flow policy distilled into one-step agents."""

from .critic import CriticEnsemble, critic_loss, estimate_lipschitz, q_tot, q_value
from .distill import (
    DistillBatchResult,
    OneStepPolicySet,
    actor_loss,
    distill_loss,
    one_step_act,
    verify_prop1,
    verify_prop2,
)
from .flow import (
    ActionSpace,
    JointFlowPolicy,
    decode_discrete,
    euler_sample,
    flow_bc_loss,
    sample_joint_action,
)

__version__ = "0.1.0"

__all__ = [
    "ActionSpace",
    "CriticEnsemble",
    "DistillBatchResult",
    "JointFlowPolicy",
    "OneStepPolicySet",
    "actor_loss",
    "critic_loss",
    "decode_discrete",
    "distill_loss",
    "estimate_lipschitz",
    "euler_sample",
    "flow_bc_loss",
    "one_step_act",
    "q_tot",
    "q_value",
    "sample_joint_action",
    "verify_prop1",
    "verify_prop2",
]
