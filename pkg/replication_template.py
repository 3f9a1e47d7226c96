from collections import OrderedDict

from cyclab.tasks import *
from cyclab.models import ModelConfig, TrainSchedule, TransformerModel, load_checkpoint, model_correct_predicate
from cyclab.learner import train
from cyclab.callbacks import EarlyStoppingCB
from cyclab.interventions import DASTrainConfig, DAS_N_PAIRS, DAS_N_TEST, train_das
from cyclab.probes import ProbeTrainConfig, r2_sweep
from cyclab.steering import SteeringConfig, steering_matrix
from cyclab.neurons import select_neurons, ablation_table
from cyclab.utils import set_seed


set_seed(0)
tasks = ['months', 'weekdays', 'hours']
datasets = OrderedDict((task, generate_dataset(get_task_spec(task))) for task in tasks)
datasets['addition'] = generate_dataset(get_task_spec('addition', a_range=(1, 30), b_range=(1, 30)))
print("Number of prompts: " + str(sum(len(prompts) for prompts in datasets.values())))

model = TransformerModel(ModelConfig(n_layers=4, d_model=128, n_heads=4, d_mlp=512))
schedule = TrainSchedule(n_epoch=200, batch_size=64, lr=1e-3, eval_every=5)
log = train(
    model, datasets, schedule,
    checkpoint_dir='weights/mixture',
    tensorboard_dir='runs/mixture',
    callbacks=[EarlyStoppingCB(monitor='in_cycle_accuracy', patience=10, mode='max')]
)
print("Best in-cycle accuracy: " + str(log.best_in_cycle_accuracy))
model, _ = load_checkpoint(log.checkpoint)

# output subspace of every task at the middle layer, on prompts the model answers correctly
layer = model.config.n_layers // 2
correct = model_correct_predicate(model, sum(datasets.values(), []))
subspaces = OrderedDict()
for task, prompts in datasets.items():
    train_pairs, test_pairs = sample_counterfactual_pairs(
        prompts, 'output_concept', DAS_N_PAIRS, DAS_N_TEST, 0, correct
    )
    subspaces[task] = train_das(
        model, train_pairs, 'output_concept', layer,
        cfg=DASTrainConfig(k=8), test_pairs=test_pairs, verbose=True
    )
    print(task + " IIA: " + str(subspaces[task].test_iia))

sweep = r2_sweep(model, datasets['addition'], range(model.config.n_layers), cfg=ProbeTrainConfig(n_epoch=300))
print(sweep.grid)

months = datasets['months'][:48]
report = steering_matrix(
    model, months, targets=range(13, 25), probes=sweep.probes[layer],
    cfg=SteeringConfig(periods=(2, 5, 10), alpha=10.0, layer=layer)
)
print(report.diagonal_mass())

selection = select_neurons(model, layer, subspaces)
for row in ablation_table(model, datasets['addition'], selection.sets['addition'].members, layer):
    print(row)
