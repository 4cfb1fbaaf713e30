#include "linattn/models/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace linattn::models {

namespace {

using nlohmann::json;

json mat_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix mat_from_json(const json& j) {
  int rows = static_cast<int>(j.size());
  int cols = rows ? static_cast<int>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

json cmat_to_json(const CMatrix& m) {
  json out;
  Matrix re = m.real(), im = m.imag();
  out["re"] = mat_to_json(re);
  out["im"] = mat_to_json(im);
  return out;
}

CMatrix cmat_from_json(const json& j) {
  Matrix re = mat_from_json(j.at("re"));
  Matrix im = mat_from_json(j.at("im"));
  CMatrix m(re.rows, re.cols);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = {re.data[i], im.data[i]};
  return m;
}

const char* mode_name(ActivationMode m) {
  return m == ActivationMode::kLinearized ? "linearized" : "standard";
}

ActivationMode mode_from_name(const std::string& s) {
  if (s == "linearized") return ActivationMode::kLinearized;
  if (s == "standard") return ActivationMode::kStandard;
  throw Error("checkpoint: unknown activation mode '" + s + "'");
}

const char* post_name(LruPostBlock p) {
  switch (p) {
    case LruPostBlock::kGluOut: return "glu_out";
    case LruPostBlock::kGluInOut: return "glu_in_out";
    case LruPostBlock::kMlpInOut: return "mlp_in_out";
  }
  return "glu_out";
}

LruPostBlock post_from_name(const std::string& s) {
  if (s == "glu_out") return LruPostBlock::kGluOut;
  if (s == "glu_in_out") return LruPostBlock::kGluInOut;
  if (s == "mlp_in_out") return LruPostBlock::kMlpInOut;
  throw Error("checkpoint: unknown lru post block '" + s + "'");
}

struct Serializer {
  json params;
  json shapes;
  std::string mode = "standard";

  void put(const std::string& name, const Matrix& m) {
    params[name] = mat_to_json(m);
    shapes[name] = {m.rows, m.cols};
  }
  void put(const std::string& name, const std::vector<double>& v) {
    params[name] = v;
    shapes[name] = {static_cast<int>(v.size())};
  }
  void put(const std::string& name, const CMatrix& m) {
    params[name] = cmat_to_json(m);
    shapes[name] = {m.rows, m.cols};
  }

  void operator()(const AttentionParams& p) {
    put("w_v", p.w_v);
    put("w_k", p.w_k);
    put("w_q", p.w_q);
  }
  void operator()(const DecayedAttentionParams& p) {
    put("w_v", p.w_v);
    put("w_k", p.w_k);
    put("w_q", p.w_q);
    put("b_v", p.b_v);
    put("b_k", p.b_k);
    put("b_q", p.b_q);
    put("gamma", p.gamma);
  }
  void operator()(const GatedRnnParams& p) {
    put("w_m_in", p.w_m_in);
    put("w_x_in", p.w_x_in);
    put("lambda_raw", p.lambda_raw);
    params["lambda_mode"] = p.lambda_mode == LambdaMode::kExp ? "exp" : "direct01";
    put("w_m_out", p.w_m_out);
    put("w_x_out", p.w_x_out);
    put("d_readout", p.d_readout);
  }
  void operator()(const SideGatedRnnParams& p) {
    put("w_m_in", p.w_m_in);
    put("w_x_in", p.w_x_in);
    put("lambda_raw", p.lambda_raw);
    params["lambda_mode"] = p.lambda_mode == LambdaMode::kExp ? "exp" : "direct01";
    put("w_side", p.w_side);
    put("d_readout", p.d_readout);
  }
  void operator()(const DenseGatedRnnParams& p) {
    put("w_m_in", p.w_m_in);
    put("w_x_in", p.w_x_in);
    put("a_rec", p.a_rec);
    put("w_m_out", p.w_m_out);
    put("w_x_out", p.w_x_out);
    put("d_readout", p.d_readout);
  }
  void operator()(const LstmParams& p) {
    mode = mode_name(p.mode);
    put("embed", p.embed);
    put("readout", p.readout);
    json layers = json::array();
    for (const auto& l : p.layers) {
      json jl;
      jl["u_f"] = mat_to_json(l.u_f);
      jl["v_f"] = mat_to_json(l.v_f);
      jl["b_f"] = l.b_f;
      jl["u_c"] = mat_to_json(l.u_c);
      jl["v_c"] = mat_to_json(l.v_c);
      jl["b_c"] = l.b_c;
      jl["u_g"] = mat_to_json(l.u_g);
      jl["v_g"] = mat_to_json(l.v_g);
      jl["b_g"] = l.b_g;
      jl["u_o"] = mat_to_json(l.u_o);
      jl["v_o"] = mat_to_json(l.v_o);
      jl["b_o"] = l.b_o;
      layers.push_back(std::move(jl));
    }
    params["layers"] = std::move(layers);
  }
  void operator()(const GruParams& p) {
    mode = mode_name(p.mode);
    put("embed", p.embed);
    put("readout", p.readout);
    json layers = json::array();
    for (const auto& l : p.layers) {
      json jl;
      jl["u_r"] = mat_to_json(l.u_r);
      jl["v_r"] = mat_to_json(l.v_r);
      jl["b_r"] = l.b_r;
      jl["u_h"] = mat_to_json(l.u_h);
      jl["v_h"] = mat_to_json(l.v_h);
      jl["b_h"] = l.b_h;
      jl["u_z"] = mat_to_json(l.u_z);
      jl["v_z"] = mat_to_json(l.v_z);
      jl["b_z"] = l.b_z;
      layers.push_back(std::move(jl));
    }
    params["layers"] = std::move(layers);
  }
  void operator()(const LruParams& p) {
    params["post"] = post_name(p.post);
    put("embed", p.embed);
    put("readout", p.readout);
    json layers = json::array();
    for (const auto& l : p.layers) {
      json jl;
      jl["nu_log"] = l.nu_log;
      jl["theta_log"] = l.theta_log;
      jl["gamma_log"] = l.gamma_log;
      jl["b_in"] = cmat_to_json(l.b_in);
      jl["c_out"] = cmat_to_json(l.c_out);
      jl["d_skip"] = mat_to_json(l.d_skip);
      jl["wm_out"] = mat_to_json(l.wm_out);
      jl["wx_out"] = mat_to_json(l.wx_out);
      jl["mlp_w1_out"] = mat_to_json(l.mlp_w1_out);
      jl["mlp_w2_out"] = mat_to_json(l.mlp_w2_out);
      jl["wm_in"] = mat_to_json(l.wm_in);
      jl["wx_in"] = mat_to_json(l.wx_in);
      jl["mlp_w1_in"] = mat_to_json(l.mlp_w1_in);
      jl["mlp_w2_in"] = mat_to_json(l.mlp_w2_in);
      layers.push_back(std::move(jl));
    }
    params["layers"] = std::move(layers);
  }
};

std::vector<double> vec_from_json(const json& j) { return j.get<std::vector<double>>(); }

LambdaMode lambda_mode_from_json(const json& p) {
  std::string s = p.at("lambda_mode").get<std::string>();
  if (s == "exp") return LambdaMode::kExp;
  if (s == "direct01") return LambdaMode::kDirect01;
  throw Error("checkpoint: unknown lambda mode '" + s + "'");
}

ModelRef parse_model(const std::string& arch, const json& p, const std::string& mode) {
  if (arch == "lsa") {
    AttentionParams a;
    a.w_v = mat_from_json(p.at("w_v"));
    a.w_k = mat_from_json(p.at("w_k"));
    a.w_q = mat_from_json(p.at("w_q"));
    return a;
  }
  if (arch == "decayed_lsa") {
    DecayedAttentionParams a;
    a.w_v = mat_from_json(p.at("w_v"));
    a.w_k = mat_from_json(p.at("w_k"));
    a.w_q = mat_from_json(p.at("w_q"));
    a.b_v = vec_from_json(p.at("b_v"));
    a.b_k = vec_from_json(p.at("b_k"));
    a.b_q = vec_from_json(p.at("b_q"));
    a.gamma = vec_from_json(p.at("gamma"));
    return a;
  }
  if (arch == "gated_rnn") {
    GatedRnnParams g;
    g.w_m_in = mat_from_json(p.at("w_m_in"));
    g.w_x_in = mat_from_json(p.at("w_x_in"));
    g.lambda_raw = vec_from_json(p.at("lambda_raw"));
    g.lambda_mode = lambda_mode_from_json(p);
    g.w_m_out = mat_from_json(p.at("w_m_out"));
    g.w_x_out = mat_from_json(p.at("w_x_out"));
    g.d_readout = mat_from_json(p.at("d_readout"));
    return g;
  }
  if (arch == "side_gated_rnn") {
    SideGatedRnnParams g;
    g.w_m_in = mat_from_json(p.at("w_m_in"));
    g.w_x_in = mat_from_json(p.at("w_x_in"));
    g.lambda_raw = vec_from_json(p.at("lambda_raw"));
    g.lambda_mode = lambda_mode_from_json(p);
    g.w_side = mat_from_json(p.at("w_side"));
    g.d_readout = mat_from_json(p.at("d_readout"));
    return g;
  }
  if (arch == "dense_gated_rnn") {
    DenseGatedRnnParams g;
    g.w_m_in = mat_from_json(p.at("w_m_in"));
    g.w_x_in = mat_from_json(p.at("w_x_in"));
    g.a_rec = mat_from_json(p.at("a_rec"));
    g.w_m_out = mat_from_json(p.at("w_m_out"));
    g.w_x_out = mat_from_json(p.at("w_x_out"));
    g.d_readout = mat_from_json(p.at("d_readout"));
    return g;
  }
  if (arch == "lstm") {
    LstmParams l;
    l.mode = mode_from_name(mode);
    l.embed = mat_from_json(p.at("embed"));
    l.readout = mat_from_json(p.at("readout"));
    for (const auto& jl : p.at("layers")) {
      LstmLayer ly;
      ly.u_f = mat_from_json(jl.at("u_f"));
      ly.v_f = mat_from_json(jl.at("v_f"));
      ly.b_f = vec_from_json(jl.at("b_f"));
      ly.u_c = mat_from_json(jl.at("u_c"));
      ly.v_c = mat_from_json(jl.at("v_c"));
      ly.b_c = vec_from_json(jl.at("b_c"));
      ly.u_g = mat_from_json(jl.at("u_g"));
      ly.v_g = mat_from_json(jl.at("v_g"));
      ly.b_g = vec_from_json(jl.at("b_g"));
      ly.u_o = mat_from_json(jl.at("u_o"));
      ly.v_o = mat_from_json(jl.at("v_o"));
      ly.b_o = vec_from_json(jl.at("b_o"));
      l.layers.push_back(std::move(ly));
    }
    return l;
  }
  if (arch == "gru") {
    GruParams g;
    g.mode = mode_from_name(mode);
    g.embed = mat_from_json(p.at("embed"));
    g.readout = mat_from_json(p.at("readout"));
    for (const auto& jl : p.at("layers")) {
      GruLayer ly;
      ly.u_r = mat_from_json(jl.at("u_r"));
      ly.v_r = mat_from_json(jl.at("v_r"));
      ly.b_r = vec_from_json(jl.at("b_r"));
      ly.u_h = mat_from_json(jl.at("u_h"));
      ly.v_h = mat_from_json(jl.at("v_h"));
      ly.b_h = vec_from_json(jl.at("b_h"));
      ly.u_z = mat_from_json(jl.at("u_z"));
      ly.v_z = mat_from_json(jl.at("v_z"));
      ly.b_z = vec_from_json(jl.at("b_z"));
      g.layers.push_back(std::move(ly));
    }
    return g;
  }
  if (arch == "lru") {
    LruParams l;
    l.post = post_from_name(p.at("post").get<std::string>());
    l.embed = mat_from_json(p.at("embed"));
    l.readout = mat_from_json(p.at("readout"));
    for (const auto& jl : p.at("layers")) {
      LruLayer ly;
      ly.nu_log = vec_from_json(jl.at("nu_log"));
      ly.theta_log = vec_from_json(jl.at("theta_log"));
      ly.gamma_log = vec_from_json(jl.at("gamma_log"));
      ly.b_in = cmat_from_json(jl.at("b_in"));
      ly.c_out = cmat_from_json(jl.at("c_out"));
      ly.d_skip = mat_from_json(jl.at("d_skip"));
      ly.wm_out = mat_from_json(jl.at("wm_out"));
      ly.wx_out = mat_from_json(jl.at("wx_out"));
      ly.mlp_w1_out = mat_from_json(jl.at("mlp_w1_out"));
      ly.mlp_w2_out = mat_from_json(jl.at("mlp_w2_out"));
      ly.wm_in = mat_from_json(jl.at("wm_in"));
      ly.wx_in = mat_from_json(jl.at("wx_in"));
      ly.mlp_w1_in = mat_from_json(jl.at("mlp_w1_in"));
      ly.mlp_w2_in = mat_from_json(jl.at("mlp_w2_in"));
      l.layers.push_back(std::move(ly));
    }
    return l;
  }
  throw Error("checkpoint: unknown architecture '" + arch + "'");
}

}  // namespace

std::string checkpoint_to_json(const ModelRef& model, const CheckpointMeta& meta) {
  Serializer s;
  std::visit(s, model);
  json doc;
  doc["arch"] = arch_name(model);
  doc["shapes"] = std::move(s.shapes);
  doc["params"] = std::move(s.params);
  doc["activation_mode"] = s.mode;
  doc["metadata"] = {{"seed", meta.seed}, {"created", meta.created}};
  return doc.dump(2);
}

void save_checkpoint(const ModelRef& model, const std::string& path,
                     const CheckpointMeta& meta) {
  std::ofstream f(path);
  if (!f) throw Error("save_checkpoint: cannot open " + path);
  f << checkpoint_to_json(model, meta) << "\n";
}

LoadedCheckpoint checkpoint_from_json(const std::string& text) {
  json doc = json::parse(text);
  LoadedCheckpoint out;
  out.meta.seed = doc.at("metadata").value("seed", 0ull);
  out.meta.created = doc.at("metadata").value("created", "");
  out.model = parse_model(doc.at("arch").get<std::string>(), doc.at("params"),
                          doc.value("activation_mode", "standard"));
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return checkpoint_from_json(text);
}

}  // namespace linattn::models
