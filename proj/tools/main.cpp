#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace rupp::cli;
  CLI::App app{"ResUnet++ brain-MRI tumour segmentation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model on an image/mask directory");
  t->add_option("--data-dir", train.data_dir, "dataset root")->required();
  t->add_option("--config", train.config, "key = value config file");
  t->add_option("--out-dir", train.out_dir, "output directory")->required();
  t->add_option("--seed", train.seed, "seed for initialization, split and shuffling");
  t->add_option("--set", train.overrides, "override a config key (key=value), repeatable");
  t->add_flag("--resume", train.resume, "continue from <out-dir>/last.ckpt");
  t->add_flag("--quiet", train.quiet, "suppress per-epoch output");

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "segment one image");
  p->add_option("--model", predict.model, "checkpoint")->required();
  p->add_option("--image", predict.image, "input PNG")->required();
  p->add_option("--mask", predict.mask, "ground-truth mask PNG");
  p->add_option("--out", predict.out, "output directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  e->add_option("--model", eval.model, "checkpoint")->required();
  e->add_option("--data-dir", eval.data_dir, "dataset root")->required();
  e->add_option("--split", eval.split, "train, val, test or all")->capture_default_str();
  e->add_option("--config", eval.config, "config used for the split (default: manifest.txt next to the model)");
  e->add_option("--csv", eval.csv, "per-sample CSV path");
  e->add_option("--set", eval.overrides, "override a config key (key=value), repeatable");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "run the gradient and oracle checks");
  v->add_option("--inject-fault", verify.inject_fault)->group("");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic blob dataset");
  g->add_option("--out", gen.out_dir, "output directory")->required();
  g->add_option("--count", gen.count)->capture_default_str();
  g->add_option("--size", gen.size)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kError;
  }

  if (*t) return cmd_train(train, std::cout, std::cerr);
  if (*p) return cmd_predict(predict, std::cout, std::cerr);
  if (*e) return cmd_eval(eval, std::cout, std::cerr);
  if (*v) return cmd_verify(verify, std::cout, std::cerr);
  return cmd_generate(gen, std::cout, std::cerr);
}
