#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sgspen/errors.hpp"
#include "sgspen/graph.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/shapes_dsl.hpp"
#include "sgspen/structured_output.hpp"
#include "sgspen/tensor.hpp"

namespace sgspen {

using FeatureVector = std::vector<double>;
using TokenSequence = std::vector<int>;
using InputInstance = std::variant<FeatureVector, TokenSequence, shapes::BinaryImage>;

enum class Architecture { multi_label, sequence, program };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::multi_label: return "multi_label";
    case Architecture::sequence: return "sequence";
    case Architecture::program: return "program";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "multi_label") return Architecture::multi_label;
  if (s == "sequence") return Architecture::sequence;
  if (s == "program") return Architecture::program;
  throw ConfigError("unknown architecture '" + s + "'");
}

/// Shape of an energy network. Only the fields of the selected architecture
/// are used.
struct ModelDescriptor {
  Architecture arch = Architecture::multi_label;

  // multi_label: E = sum_i p_i (b_i . F(x)) + v . softplus(W p + c)
  int num_features = 0;
  int num_labels = 0;
  int feature_hidden = 64;
  int feature_dim = 64;
  int global_hidden = 15;

  // sequence: local token/tag compatibility + pairwise term on neighbours
  int token_vocab = 0;
  int seq_len = 0;
  int num_tags = 0;
  int embed_dim = 16;
  int pair_hidden = 32;

  // program: expected token embeddings -> MLP, pooled image -> MLP, joint MLP
  int image_size = 64;
  int pool = 4;
  int program_length = 5;
  int program_vocab = 0;
  int token_dim = 32;
  int program_hidden = 128;
  int program_embed = 64;
  int image_hidden = 128;
  int image_embed = 64;
  int joint_hidden = 128;

  /// Multiplies every Glorot bound (weight matrices and output vectors).
  double init_gain = 1.0;

  OutputSpace space() const {
    switch (arch) {
      case Architecture::multi_label: return OutputSpace::uniform(num_labels, 2);
      case Architecture::sequence: return OutputSpace::uniform(seq_len, num_tags);
      case Architecture::program: return OutputSpace::uniform(program_length, program_vocab);
    }
    return {};
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    m["arch"] = to_string(arch);
    {
      std::ostringstream g;
      g.precision(17);
      g << init_gain;
      m["init_gain"] = g.str();
    }
    auto put = [&](const char* k, int v) { m[k] = std::to_string(v); };
    switch (arch) {
      case Architecture::multi_label:
        put("num_features", num_features);
        put("num_labels", num_labels);
        put("feature_hidden", feature_hidden);
        put("feature_dim", feature_dim);
        put("global_hidden", global_hidden);
        break;
      case Architecture::sequence:
        put("token_vocab", token_vocab);
        put("seq_len", seq_len);
        put("num_tags", num_tags);
        put("embed_dim", embed_dim);
        put("pair_hidden", pair_hidden);
        break;
      case Architecture::program:
        put("image_size", image_size);
        put("pool", pool);
        put("program_length", program_length);
        put("program_vocab", program_vocab);
        put("token_dim", token_dim);
        put("program_hidden", program_hidden);
        put("program_embed", program_embed);
        put("image_hidden", image_hidden);
        put("image_embed", image_embed);
        put("joint_hidden", joint_hidden);
        break;
    }
    return m;
  }

  static ModelDescriptor from_map(const std::map<std::string, std::string>& m) {
    ModelDescriptor d;
    d.arch = parse_architecture(m.at("arch"));
    const std::map<std::string, int*> fields{
        {"num_features", &d.num_features}, {"num_labels", &d.num_labels},
        {"feature_hidden", &d.feature_hidden}, {"feature_dim", &d.feature_dim},
        {"global_hidden", &d.global_hidden}, {"token_vocab", &d.token_vocab},
        {"seq_len", &d.seq_len}, {"num_tags", &d.num_tags},
        {"embed_dim", &d.embed_dim}, {"pair_hidden", &d.pair_hidden},
        {"image_size", &d.image_size}, {"pool", &d.pool},
        {"program_length", &d.program_length}, {"program_vocab", &d.program_vocab},
        {"token_dim", &d.token_dim}, {"program_hidden", &d.program_hidden},
        {"program_embed", &d.program_embed}, {"image_hidden", &d.image_hidden},
        {"image_embed", &d.image_embed}, {"joint_hidden", &d.joint_hidden},
    };
    for (const auto& [k, v] : m) {
      if (k == "arch") continue;
      if (k == "init_gain") {
        d.init_gain = std::stod(v);
        continue;
      }
      auto it = fields.find(k);
      if (it == fields.end()) throw DataError("model descriptor: unknown key '" + k + "'");
      *it->second = std::stoi(v);
    }
    return d;
  }

  void validate() const {
    if (!(init_gain > 0)) throw ConfigError("model descriptor: init_gain must be positive");
    auto pos = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string("model descriptor: ") + what + " must be positive");
    };
    switch (arch) {
      case Architecture::multi_label:
        pos(num_features, "num_features");
        pos(num_labels, "num_labels");
        pos(feature_hidden, "feature_hidden");
        pos(feature_dim, "feature_dim");
        pos(global_hidden, "global_hidden");
        break;
      case Architecture::sequence:
        pos(token_vocab, "token_vocab");
        pos(seq_len, "seq_len");
        pos(embed_dim, "embed_dim");
        pos(pair_hidden, "pair_hidden");
        if (num_tags < 2) throw ConfigError("model descriptor: num_tags must be >= 2");
        break;
      case Architecture::program:
        pos(image_size, "image_size");
        pos(pool, "pool");
        pos(program_length, "program_length");
        pos(token_dim, "token_dim");
        pos(program_hidden, "program_hidden");
        pos(program_embed, "program_embed");
        pos(image_hidden, "image_hidden");
        pos(image_embed, "image_embed");
        pos(joint_hidden, "joint_hidden");
        if (program_vocab < 2) throw ConfigError("model descriptor: program_vocab must be >= 2");
        if (image_size % pool != 0) throw ConfigError("model descriptor: pool must divide image_size");
        break;
    }
  }
};

/// One term of a weighted sum of energies, for parameter gradients.
struct EnergyTerm {
  const InputInstance* x;
  RelaxedOutput y;
  double coeff;
};

using OutputGradient = std::vector<std::vector<double>>;

/// E_w(x, y) for one of the three architectures.
///
/// Evaluation goes through one internal Graph, so a model must not be
/// evaluated from two threads at once; copy it per thread instead.
class EnergyModel {
 public:
  EnergyModel(const ModelDescriptor& desc, Rng& init_rng) : desc_(desc), space_(checked_space(desc)) {
    init_params(init_rng);
    build_graph();
  }

  EnergyModel(const ModelDescriptor& desc, ParamSet params)
      : desc_(desc), space_(checked_space(desc)), params_(std::move(params)) {
    Rng dummy(0);
    EnergyModel reference(desc, dummy);
    params_.require_same_layout(reference.params_);
    build_graph();
  }

  EnergyModel(const EnergyModel& o)
      : desc_(o.desc_), space_(o.space_), params_(o.params_), graph_(o.graph_), x_node_(o.x_node_),
        tok_nodes_(o.tok_nodes_), y_nodes_(o.y_nodes_) {}

  EnergyModel& operator=(const EnergyModel& o) {
    if (this != &o) {
      desc_ = o.desc_;
      space_ = o.space_;
      params_ = o.params_;
      graph_ = o.graph_;
      x_node_ = o.x_node_;
      tok_nodes_ = o.tok_nodes_;
      y_nodes_ = o.y_nodes_;
      owner_ = 0;
    }
    return *this;
  }

  const ModelDescriptor& descriptor() const { return desc_; }
  Architecture architecture() const { return desc_.arch; }
  const OutputSpace& space() const { return space_; }
  const ParamSet& params() const { return params_; }

  /// Mutable parameter access; invalidates any cached inference state.
  ParamSet& mutable_params() {
    owner_ = 0;
    return params_;
  }

  double energy(const InputInstance& x, const RelaxedOutput& y) const {
    bind(x, y);
    owner_ = 0;
    return graph_.forward(params_);
  }

  OutputGradient grad_y(const InputInstance& x, const RelaxedOutput& y) const {
    OutputGradient g;
    energy_and_grad_y(x, y, g);
    return g;
  }

  double energy_and_grad_y(const InputInstance& x, const RelaxedOutput& y, OutputGradient& grad) const {
    const double e = energy(x, y);
    graph_.backward_variable();
    read_y_grad(grad);
    return e;
  }

  /// Gradient of sum_j coeff_j * E(x_j, y_j) w.r.t. every parameter.
  ParamSet grad_w(std::span<const EnergyTerm> terms) const {
    if (terms.empty()) throw ContractError("grad_w: empty term list");
    ParamSet g = params_.zeros_like();
    for (const auto& t : terms) accumulate_grad_w(*t.x, t.y, t.coeff, g);
    return g;
  }

  /// grad += coeff * dE(x, y)/dw; returns E(x, y).
  double accumulate_grad_w(const InputInstance& x, const RelaxedOutput& y, double coeff,
                           ParamSet& grad) const {
    bind(x, y);
    owner_ = 0;
    const double e = graph_.forward(params_);
    graph_.backward_accumulate(coeff, grad);
    return e;
  }

  /// Repeated energy/gradient evaluation at a fixed x. The part of the
  /// network that depends only on x and w is computed once per session.
  class Session {
   public:
    double eval(const RelaxedOutput& y, OutputGradient& grad) {
      double e;
      if (model_->owner_ != id_) {
        model_->bind(*x_, y);
        model_->owner_ = id_;
        e = model_->graph_.forward(model_->params_);
      } else {
        model_->bind_y(y);
        e = model_->graph_.reforward();
      }
      model_->graph_.backward_variable();
      model_->read_y_grad(grad);
      return e;
    }

    double energy(const RelaxedOutput& y) {
      if (model_->owner_ != id_) {
        model_->bind(*x_, y);
        model_->owner_ = id_;
        return model_->graph_.forward(model_->params_);
      }
      model_->bind_y(y);
      return model_->graph_.reforward();
    }

   private:
    friend class EnergyModel;
    Session(const EnergyModel* m, const InputInstance* x, std::uint64_t id) : model_(m), x_(x), id_(id) {}
    const EnergyModel* model_;
    const InputInstance* x_;
    std::uint64_t id_;
  };

  /// x must outlive the session.
  Session session(const InputInstance& x) const {
    check_input(x);
    return Session(this, &x, ++next_session_);
  }

  /// Graph access for gradient checking. Inputs are named "x" (multi_label),
  /// "tok<i>" (sequence, one-hot), "image" (program) and "y<i>".
  Graph& graph() const {
    owner_ = 0;
    return graph_;
  }

  /// The graph input map that energy(x, y) would bind.
  InputMap input_map(const InputInstance& x, const RelaxedOutput& y) const {
    check_input(x);
    check_output(y);
    InputMap m;
    switch (desc_.arch) {
      case Architecture::multi_label:
        m["x"] = Array::vector(std::get<FeatureVector>(x));
        break;
      case Architecture::sequence: {
        const auto& toks = std::get<TokenSequence>(x);
        for (std::size_t i = 0; i < toks.size(); ++i) {
          Array oh({static_cast<std::size_t>(desc_.token_vocab)});
          oh[static_cast<std::size_t>(toks[i])] = 1.0;
          m["tok" + std::to_string(i)] = std::move(oh);
        }
        break;
      }
      case Architecture::program:
        m["image"] = Array::vector(std::get<shapes::BinaryImage>(x).to_reals());
        break;
    }
    for (std::size_t i = 0; i < y.dists.size(); ++i) m["y" + std::to_string(i)] = Array::vector(y.dists[i]);
    return m;
  }

  void check_input(const InputInstance& x) const {
    switch (desc_.arch) {
      case Architecture::multi_label: {
        const auto* f = std::get_if<FeatureVector>(&x);
        if (!f) throw DataError("multi_label model expects a feature vector");
        if (f->size() != static_cast<std::size_t>(desc_.num_features))
          throw DataError("multi_label model expects " + std::to_string(desc_.num_features) +
                          " features, got " + std::to_string(f->size()));
        return;
      }
      case Architecture::sequence: {
        const auto* t = std::get_if<TokenSequence>(&x);
        if (!t) throw DataError("sequence model expects a token sequence");
        if (t->size() != static_cast<std::size_t>(desc_.seq_len))
          throw DataError("sequence model expects length " + std::to_string(desc_.seq_len) + ", got " +
                          std::to_string(t->size()));
        for (int tok : *t)
          if (tok < 0 || tok >= desc_.token_vocab)
            throw DataError("sequence model: token id " + std::to_string(tok) + " outside vocabulary");
        return;
      }
      case Architecture::program: {
        const auto* im = std::get_if<shapes::BinaryImage>(&x);
        if (!im) throw DataError("program model expects a binary image");
        if (im->height() != desc_.image_size || im->width() != desc_.image_size)
          throw DataError("program model expects a " + std::to_string(desc_.image_size) + "x" +
                          std::to_string(desc_.image_size) + " image");
        return;
      }
    }
  }

  void check_output(const RelaxedOutput& y) const {
    if (!(y.space == space_)) throw DataError("energy model: output space mismatch");
    for (std::size_t i = 0; i < y.dists.size(); ++i)
      if (y.dists[i].size() != static_cast<std::size_t>(space_.num_states(i)))
        throw DataError("energy model: distribution " + std::to_string(i) + " has wrong length");
  }

 private:
  static OutputSpace checked_space(const ModelDescriptor& d) {
    d.validate();
    return d.space();
  }

  void init_params(Rng& rng) {
    const double gain = desc_.init_gain;
    auto mat = [&](const std::string& name, int rows, int cols) {
      Array w = glorot_uniform(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), rng);
      for (auto& v : w.values()) v *= gain;
      params_.add(name, std::move(w));
    };
    auto vec = [&](const std::string& name, int n) {
      Array w = glorot_uniform(1, static_cast<std::size_t>(n), rng);
      for (auto& v : w.values()) v *= gain;
      params_.add(name, Array({static_cast<std::size_t>(n)}, std::move(w.values())));
    };
    auto bias = [&](const std::string& name, int n) { params_.add(name, Array({static_cast<std::size_t>(n)})); };
    const auto& d = desc_;
    switch (d.arch) {
      case Architecture::multi_label:
        mat("feat.W1", d.feature_hidden, d.num_features);
        bias("feat.b1", d.feature_hidden);
        mat("feat.W2", d.feature_dim, d.feature_hidden);
        bias("feat.b2", d.feature_dim);
        mat("local.B", d.num_labels, d.feature_dim);
        mat("global.W", d.global_hidden, d.num_labels);
        bias("global.c", d.global_hidden);
        vec("global.v", d.global_hidden);
        break;
      case Architecture::sequence:
        mat("embed.E", d.embed_dim, d.token_vocab);
        mat("local.W", d.num_tags, d.embed_dim);
        mat("pair.U", d.pair_hidden, 2 * d.num_tags);
        bias("pair.c", d.pair_hidden);
        vec("pair.v", d.pair_hidden);
        break;
      case Architecture::program: {
        const int pooled = (d.image_size / d.pool) * (d.image_size / d.pool);
        mat("prog.E", d.token_dim, d.program_vocab);
        mat("prog.W1", d.program_hidden, d.program_length * d.token_dim);
        bias("prog.b1", d.program_hidden);
        mat("prog.W2", d.program_embed, d.program_hidden);
        bias("prog.b2", d.program_embed);
        mat("img.W1", d.image_hidden, pooled);
        bias("img.b1", d.image_hidden);
        mat("img.W2", d.image_embed, d.image_hidden);
        bias("img.b2", d.image_embed);
        mat("joint.W", d.joint_hidden, d.program_embed + d.image_embed);
        bias("joint.b", d.joint_hidden);
        vec("joint.v", d.joint_hidden);
        mat("local.B", d.program_length * d.program_vocab, d.image_embed);
        break;
      }
    }
  }

  void build_graph() {
    Graph& g = graph_;
    const auto& d = desc_;
    const std::size_t L = space_.num_vars();
    std::vector<std::string> ynames;
    for (std::size_t i = 0; i < L; ++i) {
      ynames.push_back("y" + std::to_string(i));
      y_nodes_.push_back(g.input(ynames.back(), static_cast<std::size_t>(space_.num_states(i))));
    }
    switch (d.arch) {
      case Architecture::multi_label: {
        x_node_ = g.input("x", static_cast<std::size_t>(d.num_features));
        auto h1 = g.relu(g.affine(g.param("feat.W1"), x_node_, g.param("feat.b1")));
        auto f = g.relu(g.affine(g.param("feat.W2"), h1, g.param("feat.b2")));
        auto scores = g.matvec(g.param("local.B"), f);
        std::vector<NodeId> ps;
        for (auto y : y_nodes_) ps.push_back(g.select(y, 1));
        auto p = g.concat(ps);
        auto local = g.dot(p, scores);
        auto hidden = g.softplus(g.affine(g.param("global.W"), p, g.param("global.c")));
        auto global = g.dot(g.param("global.v"), hidden);
        g.set_output(g.add(local, global));
        break;
      }
      case Architecture::sequence: {
        std::vector<NodeId> terms;
        for (std::size_t i = 0; i < L; ++i) {
          tok_nodes_.push_back(g.input("tok" + std::to_string(i), static_cast<std::size_t>(d.token_vocab)));
          auto e = g.matvec(g.param("embed.E"), tok_nodes_.back());
          auto u = g.matvec(g.param("local.W"), e);
          terms.push_back(g.dot(y_nodes_[i], u));
        }
        for (std::size_t i = 0; i + 1 < L; ++i) {
          auto z = g.concat({y_nodes_[i], y_nodes_[i + 1]});
          auto h = g.softplus(g.affine(g.param("pair.U"), z, g.param("pair.c")));
          terms.push_back(g.dot(g.param("pair.v"), h));
        }
        g.set_output(g.sum(g.concat(terms)));
        break;
      }
      case Architecture::program: {
        std::vector<NodeId> toks;
        for (auto y : y_nodes_) toks.push_back(g.matvec(g.param("prog.E"), y));
        auto z = g.concat(toks);
        auto hp = g.softplus(g.affine(g.param("prog.W1"), z, g.param("prog.b1")));
        auto pe = g.affine(g.param("prog.W2"), hp, g.param("prog.b2"));
        const auto n = static_cast<std::size_t>(d.image_size);
        x_node_ = g.input("image", n * n);
        auto pooled = g.mean_pool(x_node_, n, n, static_cast<std::size_t>(d.pool));
        auto hi = g.relu(g.affine(g.param("img.W1"), pooled, g.param("img.b1")));
        auto ie = g.affine(g.param("img.W2"), hi, g.param("img.b2"));
        auto hj = g.softplus(g.affine(g.param("joint.W"), g.concat({pe, ie}), g.param("joint.b")));
        auto global = g.dot(g.param("joint.v"), hj);
        // Local term: per-position token scores read off the image embedding.
        auto local = g.dot(g.concat(y_nodes_), g.matvec(g.param("local.B"), ie));
        g.set_output(g.sum(g.concat({local, global})));
        break;
      }
    }
    g.set_variable_inputs(ynames);
  }

  void bind_y(const RelaxedOutput& y) const {
    for (std::size_t i = 0; i < y_nodes_.size(); ++i) graph_.set_input(y_nodes_[i], y.dists[i]);
  }

  void bind(const InputInstance& x, const RelaxedOutput& y) const {
    check_input(x);
    check_output(y);
    switch (desc_.arch) {
      case Architecture::multi_label:
        graph_.set_input(x_node_, std::get<FeatureVector>(x));
        break;
      case Architecture::sequence: {
        const auto& toks = std::get<TokenSequence>(x);
        std::vector<double> oh(static_cast<std::size_t>(desc_.token_vocab));
        for (std::size_t i = 0; i < toks.size(); ++i) {
          std::fill(oh.begin(), oh.end(), 0.0);
          oh[static_cast<std::size_t>(toks[i])] = 1.0;
          graph_.set_input(tok_nodes_[i], oh);
        }
        break;
      }
      case Architecture::program:
        graph_.set_input(x_node_, std::get<shapes::BinaryImage>(x).to_reals());
        break;
    }
    bind_y(y);
  }

  void read_y_grad(OutputGradient& grad) const {
    grad.resize(y_nodes_.size());
    for (std::size_t i = 0; i < y_nodes_.size(); ++i) {
      const Array& a = graph_.grad_of(y_nodes_[i]);
      grad[i].assign(a.data(), a.data() + a.size());
    }
  }

  ModelDescriptor desc_;
  OutputSpace space_;
  ParamSet params_;
  mutable Graph graph_;
  NodeId x_node_{};
  std::vector<NodeId> tok_nodes_;
  std::vector<NodeId> y_nodes_;
  mutable std::uint64_t owner_ = 0;
  mutable std::uint64_t next_session_ = 0;
};

// ---- checkpoints ------------------------------------------------------------
//
// Text header, then the binary parameter container:
//   sgspen-model 1
//   <descriptor key> = <value>       (one per line)
//   # <free-form config echo lines>
//   end
//   <ParamSet container>

inline void write_model(std::ostream& os, const EnergyModel& model, const std::string& config_echo = "") {
  os << "sgspen-model 1\n";
  for (const auto& [k, v] : model.descriptor().to_map()) os << k << " = " << v << '\n';
  std::istringstream echo(config_echo);
  std::string line;
  while (std::getline(echo, line)) os << "# " << line << '\n';
  os << "end\n";
  write_params(os, model.params());
}

inline EnergyModel read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "sgspen-model 1") throw DataError("checkpoint: bad header");
  std::map<std::string, std::string> kv;
  while (std::getline(is, line)) {
    if (line == "end") break;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError("checkpoint: malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (line != "end") throw DataError("checkpoint: header not terminated");
  const auto desc = ModelDescriptor::from_map(kv);
  return EnergyModel(desc, read_params(is));
}

}  // namespace sgspen
