#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

/// Compare analytic gradients of a scalar-valued tensor program against
/// central finite differences, perturbing every entry of every listed
/// parameter. Returns the maximum of |analytic - numeric| / max(1, |analytic|);
/// a NaN result flags an unstable operation.
template <typename Scalar>
Scalar grad_check(const std::function<TensorT<Scalar>()>& f, const std::vector<TensorT<Scalar>*>& params,
                  Scalar h = Scalar(1e-5)) {
    for (auto* p : params) p->zero_grad();
    TensorT<Scalar> loss = f();
    if (loss.numel() != 1)
        throw std::invalid_argument("grad_check: program must produce a scalar, got " +
                                    shape_string(loss.shape()));
    backward(loss);

    std::vector<typename TensorT<Scalar>::Array> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) {
        if (p->grad().size() == p->numel())
            analytic.push_back(p->grad());
        else
            analytic.push_back(TensorT<Scalar>::Array::Zero(p->numel()));
    }

    Scalar worst = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        TensorT<Scalar>& p = *params[pi];
        for (Index i = 0; i < p.numel(); ++i) {
            const Scalar saved = p.value()[i];
            p.value_mut()[i] = saved + h;
            const Scalar up = f().value()[0];
            p.value_mut()[i] = saved - h;
            const Scalar down = f().value()[0];
            p.value_mut()[i] = saved;
            const Scalar numeric = (up - down) / (2 * h);
            const Scalar a = analytic[pi][i];
            const Scalar err = std::abs(a - numeric) / std::max(Scalar(1), std::abs(a));
            if (std::isnan(err)) return err;
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace gridcast
