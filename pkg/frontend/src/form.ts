/** AutoBuild form state: mirrors the run-config fields the console exposes,
 * with client-side validation. Submit stays disabled until everything
 * passes; the ratio-sum indicator updates live. */

export interface RunFormState {
  runName: string;
  sourcePath: string;
  targetPath: string;
  trainRatio: number;
  validRatio: number;
  testRatio: number;
  seed: number;
  subwordKind: string;
  vocabSize: number;
  architecture: string;
  modelWidth: number;
  layerCount: number;
  headCount: number;
  maxSteps: number;
  validationInterval: number;
  learningRate: number;
  optimizer: string;
}

export const DEFAULT_FORM: RunFormState = {
  runName: "",
  sourcePath: "",
  targetPath: "",
  trainRatio: 0.8,
  validRatio: 0.1,
  testRatio: 0.1,
  seed: 1,
  subwordKind: "unigram",
  vocabSize: 8000,
  architecture: "transformer",
  modelWidth: 256,
  layerCount: 2,
  headCount: 8,
  maxSteps: 1000,
  validationInterval: 100,
  learningRate: 2.0,
  optimizer: "adaptive-moment",
};

export function ratioSum(form: RunFormState): number {
  return form.trainRatio + form.validRatio + form.testRatio;
}

export function ratiosValid(form: RunFormState): boolean {
  const ratios = [form.trainRatio, form.validRatio, form.testRatio];
  return (
    ratios.every((r) => r > 0 && r < 1) && Math.abs(ratioSum(form) - 1.0) <= 1e-9
  );
}

export function validate(form: RunFormState): Record<string, string> {
  const errors: Record<string, string> = {};
  if (!form.runName.trim()) {
    errors.runName = "run name is required";
  } else if (form.runName.includes("/")) {
    errors.runName = "run name must not contain '/'";
  }
  if (!form.sourcePath.trim()) {
    errors.sourcePath = "source corpus path is required";
  }
  if (!form.targetPath.trim()) {
    errors.targetPath = "target corpus path is required";
  }
  if (!ratiosValid(form)) {
    errors.ratios = `split ratios must each be in (0,1) and sum to 1 (now ${ratioSum(form)})`;
  }
  if (!Number.isInteger(form.seed)) {
    errors.seed = "seed must be an integer";
  }
  if (form.vocabSize < 5) {
    errors.vocabSize = "vocabulary size must be at least 5";
  }
  if (form.architecture === "transformer" && form.modelWidth % form.headCount !== 0) {
    errors.headCount = `model width ${form.modelWidth} not divisible by ${form.headCount} heads`;
  }
  for (const key of ["modelWidth", "layerCount", "headCount", "maxSteps", "validationInterval"] as const) {
    if (form[key] < 1 || !Number.isInteger(form[key])) {
      errors[key] = "must be a positive integer";
    }
  }
  if (!(form.learningRate > 0)) {
    errors.learningRate = "learning rate must be positive";
  }
  return errors;
}

export function submitEnabled(form: RunFormState): boolean {
  return Object.keys(validate(form)).length === 0;
}

/** The run-config mapping POSTed to /api/runs (field names mirror the
 * server's RunConfig). */
export function toRunConfig(form: RunFormState): unknown {
  return {
    run_name: form.runName.trim(),
    output_root: "ignored-by-service",
    data: {
      source_path: form.sourcePath.trim(),
      target_path: form.targetPath.trim(),
    },
    split: {
      train_ratio: form.trainRatio,
      valid_ratio: form.validRatio,
      test_ratio: form.testRatio,
      seed: form.seed,
    },
    subword: {
      kind: form.subwordKind,
      source_vocab_size: form.vocabSize,
      target_vocab_size: form.vocabSize,
    },
    architecture: {
      kind: form.architecture,
      layer_count: form.layerCount,
      model_width: form.modelWidth,
      head_count: form.headCount,
    },
    hyperparameters: {
      optimizer: form.optimizer,
      learning_rate: form.learningRate,
      max_steps: form.maxSteps,
      validation_interval: form.validationInterval,
      seed: form.seed,
    },
  };
}
