"""Car/pedestrian interaction simulator and dataset tools."""
from .dataset import (CAR, PED, Dataset, DatasetConfig, featurize, featurize_batch, generate_dataset,
                      load_dataset, read_manifest)
from .geometry import CAR_DIRS, PED_DIRS, REGIONS, Regions, angle_diff, dtc, inter, overlap, within
from .world import (CAR_STATES, PED_STATES, ActionMixture, ActorState, action_distribution, gt_distribution,
                    init_world, make_world, rollout_terminals, simulate, step, step_states)

__all__ = ["CAR", "PED", "Dataset", "DatasetConfig", "featurize", "featurize_batch", "generate_dataset",
           "load_dataset", "read_manifest", "CAR_DIRS", "PED_DIRS", "REGIONS", "Regions", "angle_diff", "dtc",
           "inter", "overlap", "within", "CAR_STATES", "PED_STATES", "ActionMixture", "ActorState",
           "action_distribution", "gt_distribution", "init_world", "make_world", "rollout_terminals", "simulate",
           "step", "step_states"]
