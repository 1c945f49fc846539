#include "lvs/network.hpp"

#include <cctype>
#include <cmath>

namespace lvs {

std::vector<BlockToken> parse_blocks(const std::string& spec) {
  std::vector<BlockToken> out;
  auto fail = [&](const std::string& tok) {
    throw DimError("parse_blocks: bad token '" + tok + "' in \"" + spec + "\"");
  };
  size_t i = 0;
  while (true) {
    size_t j = spec.find(',', i);
    if (j == std::string::npos) j = spec.size();
    std::string tok = spec.substr(i, j - i);
    size_t b = tok.find_first_not_of(" \t");
    tok = b == std::string::npos ? "" : tok.substr(b, tok.find_last_not_of(" \t") - b + 1);
    if (tok == "Bp") {
      out.push_back({BlockKind::backproject, 0});
    } else if (tok == "U") {
      out.push_back({BlockKind::update, 0});
    } else if (tok == "Lc") {
      out.push_back({BlockKind::collapse, 0});
    } else if (tok == "C") {
      out.push_back({BlockKind::conv, 0});
    } else if (tok.size() > 1 && tok[0] == 'A') {
      int64_t h = 0;
      for (size_t c = 1; c < tok.size(); ++c) {
        if (!std::isdigit(static_cast<unsigned char>(tok[c])) || h > 1024) fail(tok);
        h = h * 10 + (tok[c] - '0');
      }
      if (h < 1) fail(tok);
      out.push_back({BlockKind::attend, h});
    } else {
      fail(tok);
    }
    if (j == spec.size()) break;
    i = j + 1;
  }
  return out;
}

void ModelConfig::validate() const {
  if (steps.empty()) throw DimError("ModelConfig: no steps");
  if (channels < 1) throw DimError("ModelConfig: channels must be >= 1");
  if (views < 1) throw DimError("ModelConfig: views must be >= 1");
  if (pyramid_levels < 1) throw DimError("ModelConfig: pyramid_levels must be >= 1");
  if (!(upsample >= 1.0)) throw DimError("ModelConfig: upsample must be >= 1");
  if (!(near > 0.0) || !(far > near)) throw DimError("ModelConfig: bad depth range");

  for (size_t s = 0; s < steps.size(); ++s) {
    const StepConfig& st = steps[s];
    const std::string where = "ModelConfig.steps[" + std::to_string(s) + "]";
    if (st.in_layers < 1 || st.layers < 1) throw DimError(where + ": bad layer count");
    if (st.height < 1 || st.width < 1) throw DimError(where + ": bad volume size");
    if (st.pyramid_level < 0 || st.pyramid_level >= pyramid_levels)
      throw DimError(where + ": pyramid level out of range");

    std::vector<BlockToken> tokens;
    try {
      tokens = parse_blocks(st.blocks);
    } catch (const DimError& e) {
      throw DimError(where + ": " + e.what());
    }

    size_t i = 0;
    int64_t collapses = 0;
    while (i < tokens.size() && tokens[i].kind == BlockKind::collapse) {
      ++collapses;
      ++i;
    }
    if (i >= tokens.size() ||
        (tokens[i].kind != BlockKind::backproject && tokens[i].kind != BlockKind::update))
      throw DimError(where + ": expected exactly one Bp or U after any Lc prefix");
    const bool bp = tokens[i].kind == BlockKind::backproject;
    if (bp && s != 0) throw DimError(where + ": Bp is allowed only in the first step");
    if (!bp && s == 0) throw DimError(where + ": the first step must use Bp");
    if (bp && collapses) throw DimError(where + ": layer collapse cannot precede Bp");
    ++i;
    if (i >= tokens.size() || tokens[i].kind != BlockKind::attend)
      throw DimError(where + ": Bp/U must be followed by an attention token");
    for (; i < tokens.size(); ++i)
      if (tokens[i].kind != BlockKind::attend && tokens[i].kind != BlockKind::conv)
        throw DimError(where + ": only A/C tokens may follow the update");

    if (st.in_layers != (st.layers << collapses))
      throw DimError(where + ": in_layers must equal layers times 2 per collapse");
    if (s == 0) {
      if (st.in_layers != st.layers) throw DimError(where + ": the first step keeps its layers");
    } else {
      const StepConfig& pr = steps[s - 1];
      if (st.in_layers != pr.layers)
        throw DimError(where + ": in_layers must chain from the previous step");
      if (st.layers > pr.layers) throw DimError(where + ": layer counts cannot increase");
      const bool same = st.height == pr.height && st.width == pr.width;
      const bool dbl = st.height == 2 * pr.height && st.width == 2 * pr.width;
      if (!same && !dbl)
        throw DimError(where + ": resolution must match or exactly double the previous step");
    }
  }
}

ForwardPlan plan_forward(const ModelConfig& cfg, int64_t image_h, int64_t image_w) {
  cfg.validate();
  ForwardPlan plan;
  int64_t h = image_h, w = image_w;
  for (int64_t k = 0; k < cfg.pyramid_levels; ++k) {
    if (h < 2 || w < 2 || h % 2 || w % 2)
      throw DimError("plan_forward: pyramid level " + std::to_string(k) +
                     " needs even input dims, got " + std::to_string(h) + "x" + std::to_string(w));
    h /= 2;
    w /= 2;
    plan.pyramid.push_back({h, w});
  }

  for (size_t s = 0; s < cfg.steps.size(); ++s) {
    const StepConfig& st = cfg.steps[s];
    StepPlan sp;
    sp.in_layers = st.in_layers;
    sp.layers = st.layers;
    sp.height = st.height;
    sp.width = st.width;
    sp.in_height = s == 0 ? st.height : cfg.steps[s - 1].height;
    sp.in_width = s == 0 ? st.width : cfg.steps[s - 1].width;
    sp.doubled = s > 0 && st.height == 2 * sp.in_height;
    sp.level = st.pyramid_level;
    sp.feat_h = plan.pyramid[size_t(sp.level)].first;
    sp.feat_w = plan.pyramid[size_t(sp.level)].second;
    if (sp.doubled) {
      // Render one level coarser, then upsample the rendered features 2x.
      if (sp.level + 1 >= cfg.pyramid_levels)
        throw DimError("plan_forward: step " + std::to_string(s) +
                       " doubles resolution but has no coarser level to render at");
      sp.render_h = plan.pyramid[size_t(sp.level + 1)].first;
      sp.render_w = plan.pyramid[size_t(sp.level + 1)].second;
    } else {
      sp.render_h = sp.feat_h;
      sp.render_w = sp.feat_w;
    }
    sp.tokens = parse_blocks(st.blocks);
    for (const BlockToken& t : sp.tokens)
      if (t.kind == BlockKind::collapse) ++sp.collapse_count;
    plan.steps.push_back(std::move(sp));
  }

  plan.out_height = std::llround(double(cfg.steps.back().height) * cfg.upsample);
  plan.out_width = std::llround(double(cfg.steps.back().width) * cfg.upsample);
  return plan;
}

ModelConfig nano_config() {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.views = 4;
  cfg.pyramid_levels = 3;
  cfg.upsample = 2.0;
  cfg.near = 1.0;
  cfg.far = 6.0;
  cfg.steps = {
      {8, 8, 8, 8, 2, "Bp,A2,C"},
      {8, 8, 8, 8, 2, "U,A2,C,C"},
      {8, 8, 16, 16, 1, "U,A2,C"},
      {8, 4, 32, 32, 0, "Lc,U,A1,C"},
  };
  return cfg;
}

ModelConfig full_scale_config() {
  ModelConfig cfg;
  cfg.channels = 32;
  cfg.views = 8;
  cfg.pyramid_levels = 4;
  cfg.upsample = 3.75;
  cfg.near = 0.5;
  cfg.far = 100.0;
  cfg.steps = {
      {24, 24, 36, 64, 3, "Bp,A4,C,C,A4,C,C,A4,C,C"},
      {24, 24, 36, 64, 3, "U,A4,C,C,A4,C,C,A4,C,C"},
      {24, 24, 72, 128, 2, "U,A4,C,C,A4,C,C,A4,C,C"},
      {24, 24, 72, 128, 2, "U,A4,C,A4,C"},
      {24, 12, 144, 256, 1, "Lc,U,A2,C,A2,C"},
      {12, 6, 288, 512, 0, "Lc,U,A1,C,A1,C"},
  };
  return cfg;
}

}  // namespace lvs
