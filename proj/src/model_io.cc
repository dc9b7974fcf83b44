// Model file layout (whitespace-separated tokens, one logical record per
// line):
//
//   uap-model v1
//   kind <logistic_regression|linear_svm|mlp|tree_ensemble>
//   n_features <n>
//   ... kind-specific records ...
//   end
//
// linear:  bias <b> / weights <n> followed by n values
// mlp:     layers <k> s0 .. s{k-1} / leaky_slope <a> / dropout_rate <p> /
//          per layer: "matrix <rows> <cols>" + row-major values,
//          "bias <rows>" + values
// trees:   base_score / shrinkage / max_leaves / trees <t>, then per tree
//          "tree <nodes>" and one "node <feature> <threshold> <left> <right>
//          <value>" line per node
#include <cstdio>
#include <sstream>

#include "uap/common.h"
#include "uap/models.h"

namespace uap {

namespace {

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string Word() {
    std::string w;
    Require(static_cast<bool>(in_ >> w), ErrorCode::kParse,
            "model file ended unexpectedly");
    return w;
  }

  void Expect(const std::string& word) {
    const std::string got = Word();
    Require(got == word, ErrorCode::kParse,
            "model file: expected '" + word + "', got '" + got + "'");
  }

  double Double() {
    const std::string w = Word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    Require(end == w.c_str() + w.size(), ErrorCode::kParse,
            "model file: bad number '" + w + "'");
    return v;
  }

  long long Int() {
    const std::string w = Word();
    char* end = nullptr;
    const long long v = std::strtoll(w.c_str(), &end, 10);
    Require(end == w.c_str() + w.size(), ErrorCode::kParse,
            "model file: bad integer '" + w + "'");
    return v;
  }

  std::size_t Size() {
    const long long v = Int();
    Require(v >= 0, ErrorCode::kParse, "model file: negative count");
    return static_cast<std::size_t>(v);
  }

 private:
  std::istringstream in_;
};

}  // namespace

std::string SerializeModel(const Classifier& model) {
  std::string out = "uap-model v1\n";
  out += "kind " + std::string(ModelKindName(model.kind())) + "\n";
  out += "n_features " + std::to_string(model.n_features()) + "\n";
  if (const auto* lin = dynamic_cast<const LinearModel*>(&model)) {
    out += "bias " + Num(lin->bias()) + "\n";
    out += "weights " + std::to_string(lin->weights().size()) + "\n";
    for (double w : lin->weights()) out += Num(w) + "\n";
  } else if (const auto* mlp = dynamic_cast<const MlpModel*>(&model)) {
    out += "layers " + std::to_string(mlp->layer_sizes().size());
    for (auto s : mlp->layer_sizes()) out += " " + std::to_string(s);
    out += "\nleaky_slope " + Num(mlp->leaky_slope()) + "\n";
    out += "dropout_rate " + Num(mlp->dropout_rate()) + "\n";
    for (std::size_t l = 0; l < mlp->n_layers(); ++l) {
      const auto& w = mlp->weights(l);
      out += "matrix " + std::to_string(w.rows()) + " " +
             std::to_string(w.cols()) + "\n";
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          if (c) out += ' ';
          out += Num(w(r, c));
        }
        out += '\n';
      }
      const auto& b = mlp->biases(l);
      out += "bias " + std::to_string(b.size()) + "\n";
      for (Eigen::Index r = 0; r < b.size(); ++r) {
        if (r) out += ' ';
        out += Num(b(r));
      }
      out += '\n';
    }
  } else if (const auto* gb = dynamic_cast<const TreeEnsembleModel*>(&model)) {
    out += "base_score " + Num(gb->base_score()) + "\n";
    out += "shrinkage " + Num(gb->shrinkage()) + "\n";
    out += "max_leaves " + std::to_string(gb->max_leaves()) + "\n";
    out += "trees " + std::to_string(gb->trees().size()) + "\n";
    for (const auto& t : gb->trees()) {
      out += "tree " + std::to_string(t.nodes.size()) + "\n";
      for (const auto& n : t.nodes) {
        out += "node " + std::to_string(n.feature) + " " + Num(n.threshold) +
               " " + std::to_string(n.left) + " " + std::to_string(n.right) +
               " " + Num(n.value) + "\n";
      }
    }
  } else {
    Fail(ErrorCode::kInvalidArgument, "unsupported model type");
  }
  out += "end\n";
  return out;
}

std::unique_ptr<Classifier> DeserializeModel(const std::string& text) {
  Reader in(text);
  in.Expect("uap-model");
  in.Expect("v1");
  in.Expect("kind");
  const ModelKind kind = ParseModelKind(in.Word());
  in.Expect("n_features");
  const std::size_t n_features = in.Size();
  std::unique_ptr<Classifier> model;
  switch (kind) {
    case ModelKind::kLogisticRegression:
    case ModelKind::kLinearSvm: {
      in.Expect("bias");
      const double bias = in.Double();
      in.Expect("weights");
      const std::size_t n = in.Size();
      Require(n == n_features, ErrorCode::kParse,
              "weight count disagrees with n_features");
      std::vector<double> w(n);
      for (auto& v : w) v = in.Double();
      model = std::make_unique<LinearModel>(kind, std::move(w), bias);
      break;
    }
    case ModelKind::kMlp: {
      in.Expect("layers");
      std::vector<std::size_t> sizes(in.Size());
      for (auto& s : sizes) s = in.Size();
      in.Expect("leaky_slope");
      const double slope = in.Double();
      in.Expect("dropout_rate");
      const double dropout = in.Double();
      auto mlp = std::make_unique<MlpModel>(sizes, slope, dropout);
      for (std::size_t l = 0; l < mlp->n_layers(); ++l) {
        in.Expect("matrix");
        const auto rows = static_cast<Eigen::Index>(in.Size());
        const auto cols = static_cast<Eigen::Index>(in.Size());
        auto& w = mlp->mutable_weights(l);
        Require(rows == w.rows() && cols == w.cols(), ErrorCode::kParse,
                "matrix shape disagrees with layer sizes");
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = in.Double();
        in.Expect("bias");
        auto& b = mlp->mutable_biases(l);
        Require(static_cast<Eigen::Index>(in.Size()) == b.size(),
                ErrorCode::kParse, "bias length disagrees with layer sizes");
        for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = in.Double();
      }
      mlp->Validate();
      Require(mlp->n_features() == n_features, ErrorCode::kParse,
              "layer sizes disagree with n_features");
      model = std::move(mlp);
      break;
    }
    case ModelKind::kTreeEnsemble: {
      in.Expect("base_score");
      const double base = in.Double();
      in.Expect("shrinkage");
      const double shrinkage = in.Double();
      in.Expect("max_leaves");
      const std::size_t max_leaves = in.Size();
      in.Expect("trees");
      std::vector<DecisionTree> trees(in.Size());
      for (auto& t : trees) {
        in.Expect("tree");
        t.nodes.resize(in.Size());
        for (auto& n : t.nodes) {
          in.Expect("node");
          n.feature = static_cast<int>(in.Int());
          n.threshold = in.Double();
          n.left = static_cast<int>(in.Int());
          n.right = static_cast<int>(in.Int());
          n.value = in.Double();
        }
      }
      model = std::make_unique<TreeEnsembleModel>(n_features, base, shrinkage,
                                                  max_leaves, std::move(trees));
      break;
    }
  }
  in.Expect("end");
  return model;
}

void SaveModel(const Classifier& model, const std::filesystem::path& path) {
  WriteFileAtomic(path, SerializeModel(model));
}

std::unique_ptr<Classifier> LoadModel(const std::filesystem::path& path) {
  return DeserializeModel(ReadFile(path));
}

}  // namespace uap
