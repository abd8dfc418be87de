#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rau/corpus.hpp"
#include "rau/edit_matrix.hpp"
#include "rau/editor.hpp"
#include "rau/encoder.hpp"
#include "rau/labeler.hpp"
#include "rau/relation.hpp"
#include "rau/segmenter.hpp"

namespace rau {

struct ModelConfig {
  EncoderConfig encoder;
  UNetConfig unet;
  SelectionSpec selection;
  /// Adds the closing [SEP] as an extra relation column so end-of-utterance inserts are learnable.
  bool eou_column = false;
  TokenizerMode tokenizer = TokenizerMode::Char;
  std::size_t max_len = kDefaultMaxLen;

  /// Fills derived sizes (U-Net input channels, default selection) and checks consistency.
  void finalize() {
    encoder.validate();
    if (selection.layers.empty() && selection.heads.empty()) selection = SelectionSpec::last_layer(encoder);
    selection.validate(encoder.layers, encoder.heads);
    unet.in_channels = 2 * selection.selected();
    unet.validate();
    if (max_len > encoder.max_positions)
      throw ConfigError("corpus.max_len (" + std::to_string(max_len) + ") exceeds encoder.max_positions (" +
                        std::to_string(encoder.max_positions) + ")");
  }
};

template <typename S>
struct Model {
  ModelConfig cfg;
  Vocab vocab;
  EncoderParams<S> encoder;
  UNetParams<S> unet;

  static Model init(ModelConfig cfg, Vocab vocab, std::uint64_t seed) {
    cfg.encoder.vocab_size = vocab.size();
    cfg.finalize();
    Model m;
    m.cfg = std::move(cfg);
    m.vocab = std::move(vocab);
    Rng enc_rng(mix_seed(seed, 1)), unet_rng(mix_seed(seed, 2));
    m.encoder = EncoderParams<S>::init(m.cfg.encoder, enc_rng);
    m.unet = UNetParams<S>::init(m.cfg.unet, unet_rng);
    return m;
  }

  /// Same shapes, all zeros; used as a gradient accumulator.
  Model zeros_like() const {
    Model z;
    z.cfg = cfg;
    z.encoder = EncoderParams<S>::zeros(cfg.encoder);
    z.unet = UNetParams<S>::zeros(cfg.unet);
    return z;
  }

  std::vector<TensorRef<S>> tensors() {
    std::vector<TensorRef<S>> out;
    for (auto t : encoder.tensors()) out.push_back({"encoder." + t.name, t.value});
    for (auto t : unet.tensors()) out.push_back({"unet." + t.name, t.value});
    return out;
  }

  template <typename T>
  Model<T> cast() const {
    Model<T> out;
    out.cfg = cfg;
    out.vocab = vocab;
    out.encoder = EncoderParams<T>::zeros(cfg.encoder);
    out.unet = UNetParams<T>::zeros(cfg.unet);
    auto src = const_cast<Model*>(this)->tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<T>();
    return out;
  }

  std::size_t grid_cols(const EncodedExample& ex) const { return ex.N() + (cfg.eou_column ? 1 : 0); }
};

/// An example ready for the network: encoded ids plus, when a reference exists, its gold
/// matrix fitted to the model's column count.
struct PreparedExample {
  DialogueExample source;
  Tokens context;
  EncodedExample encoded;
  std::optional<EditMatrix> gold;
  LabelResult label_info;
  /// Gold cells on the end-of-utterance column lost because the model has no such column.
  std::size_t uncovered = 0;
};

template <typename S>
PreparedExample prepare(const DialogueExample& ex, const Model<S>& model) {
  PreparedExample p;
  p.source = ex;
  p.context = ex.context();
  p.encoded = encode_example(ex, model.vocab, model.cfg.max_len);
  if (ex.reference) {
    p.label_info = label(p.context, ex.incomplete, *ex.reference);
    const std::size_t cols = model.grid_cols(p.encoded);
    const EditMatrix& full = p.label_info.matrix;
    if (full.cols() > cols)
      for (std::size_t r = 0; r < full.rows(); ++r) p.uncovered += full.at(r, cols) != EditClass::None;
    p.gold = full.with_cols(cols);
  }
  return p;
}

template <typename S>
std::vector<PreparedExample> prepare_all(const std::vector<DialogueExample>& exs, const Model<S>& model) {
  std::vector<PreparedExample> out;
  out.reserve(exs.size());
  for (const auto& e : exs) out.push_back(prepare(e, model));
  return out;
}

template <typename S>
struct ForwardPass {
  EncoderOutput<S> encoder;
  RelationTensor<S> relation;
  UNetOutput<S> unet;
};

template <typename S>
ForwardPass<S> model_forward(const Model<S>& m, const EncodedExample& ex, bool train, Rng* rng = nullptr) {
  ForwardPass<S> fp;
  fp.encoder = encoder_forward(ex, m.encoder, m.cfg.encoder, train, rng);
  fp.relation = assemble(fp.encoder.attention, ex, m.cfg.selection, m.cfg.eou_column);
  fp.unet = unet_forward(fp.relation, m.unet, m.cfg.unet, train);
  return fp;
}

/// Backpropagates d(loss)/d(logits) through U-Net, relation assembly and encoder.
template <typename S>
void model_backward(const Model<S>& m, const EncodedExample& ex, const ForwardPass<S>& fp, const Mat<S>& d_logits,
                    Model<S>& grads) {
  Mat<S> d_rel = unet_backward(fp.unet.tape, d_logits, m.unet, m.cfg.unet, grads.unet);
  auto d_att = assemble_backward(d_rel, ex, m.cfg.selection, m.cfg.encoder.layers, m.cfg.encoder.heads,
                                 m.cfg.eou_column);
  encoder_backward(fp.encoder.tape, d_att, m.encoder, m.cfg.encoder, grads.encoder);
}

template <typename S>
EditMatrix predict_edits(const Model<S>& m, const EncodedExample& ex) {
  return decode(model_forward(m, ex, false).unet.logits);
}

template <typename S>
Tokens rewrite(const Model<S>& m, const DialogueExample& ex) {
  auto enc = encode_example(ex, m.vocab, m.cfg.max_len);
  return apply(ex.context(), ex.incomplete, predict_edits(m, enc));
}

}  // namespace rau
