#ifndef XAD_OPTIM_HPP
#define XAD_OPTIM_HPP

#include <map>
#include <string>
#include <vector>

#include "xad/params.hpp"

namespace xad {

// AdamW with decoupled weight decay. The optimizer owns an explicit
// parameter list; anything outside it (frozen weights in particular) is
// never written.
class AdamW {
  public:
    AdamW(ParamStore& store, std::vector<std::string> param_names, double lr,
          double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0,
          double eps = 1e-8);

    void step(const std::map<std::string, Tensor>& grads);

    const std::vector<std::string>& param_names() const { return names_; }
    int step_count() const { return step_count_; }

    // moment access for checkpointing (first/second moment per parameter)
    std::map<std::string, Tensor>& moments_m() { return m_; }
    std::map<std::string, Tensor>& moments_v() { return v_; }
    void set_step_count(int n) { step_count_ = n; }

  private:
    ParamStore& store_;
    std::vector<std::string> names_;
    double lr_, beta1_, beta2_, wd_, eps_;
    int step_count_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace xad

#endif
