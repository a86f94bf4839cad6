# Command descriptions shown by --help
COMMAND_LEXICON = {
    "description": "Adversarial neuron manipulation lab: train stand-in backbones, craft universal perturbations, evaluate transfer.",
    "gen-data": "Generate a synthetic dataset (generation, pretext or task images) as an ANMD file.",
    "pretrain": "Train a stand-in pretrained model f_p on a labeled pretext dataset.",
    "finetune": "Retrain a fresh head on a frozen extractor to build a downstream victim f_d.",
    "stats": "Per-neuron activation statistics of a model on a generation dataset.",
    "select-neurons": "Greedy mutual-information neuron selection (MIMS).",
    "attack": "Craft universal perturbations with ANM-S, ANM-RANDOM or ANM-M.",
    "evaluate": "Clean and attacked accuracy of victims under given perturbations.",
    "campaign": "Run a full campaign and write the accuracy-drop report.",
    "transfer-matrix": "Cross-model transfer grid of a campaign.",
    "sweep-k": "Accuracy drop against the number of attacked neurons.",
    "amplification": "Before/after activations of the neurons under a perturbation.",
}

# Flag help strings
ARG_LEXICON = {
    "out": "output file",
    "kind": "dataset family: generation, pretext or task",
    "classes": "number of classes (ignored for generation data)",
    "n": "number of samples",
    "seed": "random seed",
    "task_seed": "seed of the class prototypes (defaults to --seed)",
    "role": "override the dataset role",
    "test_n": "split off this many test samples into <out>-test",
    "arch": "architecture id",
    "data": "input ANMD dataset",
    "config": "KEY=VALUE experiment config file",
    "pretrained": "pretrained ANMF model",
    "model": "ANMF model",
    "seed_neuron_policy": "max-variance, explicit:<j> or random:<seed>",
    "k": "number of neurons to select",
    "method": "attack method",
    "neurons": "comma-separated neuron indices",
    "neuron_set": "neuron set JSON written by select-neurons",
    "count": "number of perturbations to craft",
    "stats": "statistics JSON written by stats (computed when omitted)",
    "visual": "also export an amplified .npy visual of each perturbation",
    "victims": "comma-separated victim ANMF models",
    "testset": "labeled ANMD test set",
    "perturbations": "comma-separated ANMP perturbation files",
    "noise_baseline": "add a uniform-noise column at equal epsilon",
    "campaign_config": "campaign KEY=VALUE file",
    "k_list": "comma-separated neuron counts",
    "victim": "victim ANMF model whose accuracy is swept",
    "perturbation": "ANMP perturbation file",
}

# Messages printed after a command
MESSAGE_LEXICON = {
    "saved": "✅ {kind} сохранён: {path}",
    "dataset": "📦 Набор данных {dataset_id}: {n} образцов, классов: {classes}, роль: {role}",
    "epoch": "📈 Эпоха {epoch}: loss={loss:.4f} accuracy={accuracy:.4f}",
    "accuracy": "🎯 Точность {model_id} на {dataset_id}: {accuracy:.4f}",
    "neurons": "🧠 Выбраны нейроны: {neurons}",
    "attack": "⚔️ {method} #{index}: нейроны {neurons}, итоговый loss {loss:.5f}",
    "eval_row": "📊 {victim_id} | {method}: {clean:.4f} → {attacked:.4f} (падение {drop:.4f})",
    "sweep_row": "📊 K={k}: {attacked:.4f} (падение {drop:.4f})",
    "amplification": "🔬 Целевые нейроны: среднее изменение {targeted}; остальные: медиана {others}",
    "error": "❌ {error}",
}
