#include "pbev/balancer.hpp"

#include <stdexcept>

namespace pbev::balance {

TaskLossLedger TaskLossLedger::make(std::vector<std::string> tasks,
                                    std::vector<double> priors) {
    if (tasks.empty() || tasks.size() != priors.size())
        throw std::invalid_argument("ledger: need one prior per task");
    for (double c : priors)
        if (!(c > 0)) throw std::invalid_argument("ledger: priors must be positive");
    TaskLossLedger l;
    l.tasks = std::move(tasks);
    l.priors = std::move(priors);
    const size_t t = l.tasks.size();
    l.sums.assign(t, 0.0);
    l.samples.assign(t, 0);
    l.weights.assign(t, 1.0);
    l.w_hat.assign(t, 1.0);
    return l;
}

int TaskLossLedger::index(const std::string& name) const {
    for (size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i] == name) return int(i);
    throw std::invalid_argument("ledger: unknown task " + name);
}

void accumulate(TaskLossLedger& ledger, int task, double value) {
    if (value < 0) ++ledger.negative_flags;
    ledger.sums[task] += value;
    ++ledger.samples[task];
}

void update_weights(TaskLossLedger& ledger) {
    const size_t t = ledger.tasks.size();
    bool any_live = false;
    std::vector<double> w_hat(t);
    for (size_t i = 0; i < t; ++i) {
        if (ledger.sums[i] > 1e-9) {
            w_hat[i] = ledger.priors[i] / ledger.sums[i];
            any_live = true;
        } else {
            w_hat[i] = ledger.w_hat[i];
        }
    }
    if (any_live) {
        double total = 0;
        for (double w : w_hat) total += w;
        for (size_t i = 0; i < t; ++i) {
            ledger.w_hat[i] = w_hat[i];
            ledger.weights[i] = w_hat[i] / total;
        }
    }
    std::fill(ledger.sums.begin(), ledger.sums.end(), 0.0);
    std::fill(ledger.samples.begin(), ledger.samples.end(), 0);
    ++ledger.epoch;
}

ad::NodePtr combined_loss(TaskLossLedger& ledger,
                          const std::vector<ad::NodePtr>& task_losses) {
    if (task_losses.size() != ledger.tasks.size())
        throw std::invalid_argument("combined_loss: loss count mismatch");
    ad::NodePtr total;
    for (size_t i = 0; i < task_losses.size(); ++i) {
        if (!task_losses[i]) {
            ++ledger.missing_flags;
            continue;
        }
        auto term = ad::mul_const(task_losses[i], ledger.weights[i]);
        total = total ? ad::add(total, term) : term;
    }
    return total ? total : ad::scalar(0.0);
}

}  // namespace pbev::balance
