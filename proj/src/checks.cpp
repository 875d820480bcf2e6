#include "sdlab/checks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sdlab/verifier.hpp"

namespace sdlab {

std::shared_ptr<TargetModel> random_toy_model(std::size_t vocab, double logit_scale,
                                              std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.max_seq_len = 32;
  c.taps = ModelConfig::default_taps(1);
  auto model = std::make_shared<TargetModel>(c, seed);
  for (double& w : model->params().get("lm_head").value.data) w *= logit_scale;
  return model;
}

LosslessReport check_lossless(const LosslessOptions& options) {
  if (options.pairs == 0 || options.max_depth == 0 || options.length == 0) {
    throw std::invalid_argument("lossless: pairs, depth and length must be > 0");
  }
  LosslessReport report;
  for (std::size_t i = 0; i < options.pairs; ++i) {
    const std::uint64_t base = derive_seed(options.seed, i);
    auto target = random_toy_model(options.vocab, options.logit_scale, derive_seed(base, 0));
    auto draft = random_toy_model(options.vocab, options.logit_scale, derive_seed(base, 1));
    Rng rng(derive_seed(base, 2));
    std::vector<Token> prompt(1 + rng.below(2));
    for (Token& t : prompt) t = static_cast<Token>(rng.below(options.vocab));

    const ConditionalDist p = memoize(model_conditional(target, options.temperature));
    const ConditionalDist q = memoize(model_conditional(draft, options.temperature));
    const SequenceDistribution reference = autoregressive_distribution(p, prompt, options.length);

    const std::size_t depth = 1 + i % options.max_depth;
    LosslessCase chain{i, "chain", depth,
                       total_variation(reference, spec_output_distribution(p, q, prompt, depth,
                                                                           options.length))};
    report.cases.push_back(chain);
    if (options.trees) {
      TreeConfig tree;
      tree.depth = depth;
      tree.expand_k = 2;
      tree.children = std::min<std::size_t>(2, options.vocab);
      tree.total_tokens = 2 * depth;
      LosslessCase t{i, "tree", depth,
                     total_variation(reference, tree_output_distribution(p, q, prompt, tree,
                                                                         options.length))};
      report.cases.push_back(t);
    }
  }
  for (const LosslessCase& c : report.cases) report.max_tv = std::max(report.max_tv, c.tv);
  return report;
}

GreedyReport check_greedy(const TargetModel& target,
                          std::span<const std::shared_ptr<const Drafter>> drafters,
                          std::span<const Sequence> prompts, const DecodeConfig& decode) {
  DecodeConfig chain = decode;
  chain.temperature = 0.0;
  chain.use_tree = false;
  DecodeConfig tree = chain;
  tree.use_tree = true;

  GreedyReport report;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<Token> expected =
        generate(target, prompts[i], decode.max_new_tokens, 0.0, nullptr);
    for (const auto& drafter : drafters) {
      for (const DecodeConfig* cfg : {&chain, &tree}) {
        const DecodeResult res = speculative_decode(target, *drafter, prompts[i], *cfg, i);
        ++report.runs;
        const auto diff = std::mismatch(res.tokens.begin(), res.tokens.end(), expected.begin());
        if (diff.first != res.tokens.end() || res.tokens.size() != expected.size()) {
          report.mismatches.push_back(
              {drafter->id(), cfg->use_tree ? "tree" : "chain", i,
               static_cast<std::size_t>(diff.first - res.tokens.begin())});
        }
      }
    }
  }
  return report;
}

GradientCheck gradient_check(ParamStore& params, const std::function<Value(Graph&)>& loss,
                             double step) {
  params.zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    Graph g(false);
    const Value v = loss(g);
    return g.value(v).data.at(0);
  };
  GradientCheck out;
  for (Parameter* p : params.trainable()) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data[i];
      p->value.data[i] = keep + step;
      const double up = eval();
      p->value.data[i] = keep - step;
      const double down = eval();
      p->value.data[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.size() ? p->grad.data[i] : 0.0;
      diff += (analytic - numeric) * (analytic - numeric);
      na += analytic * analytic;
      nn += numeric * numeric;
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    const double rel = denom > 0.0 ? std::sqrt(diff) / denom : 0.0;
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = p->name;
    }
    ++out.params;
    out.elements += p->value.size();
  }
  params.zero_grad();
  return out;
}

}  // namespace sdlab
