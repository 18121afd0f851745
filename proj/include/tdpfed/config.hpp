#ifndef TDPFED_CONFIG_HPP_
#define TDPFED_CONFIG_HPP_

#include <string>

#include "tdpfed/simulator.hpp"

namespace tdpfed {

/**
 * Parses an experiment config.
 *
 * Grammar, one item per line:
 *
 *   # comment            (also after a value)
 *   [section]
 *   key = value
 *
 * Sections and keys:
 *
 *   [experiment] seed strategy(afm|act) eval_every als_iters
 *                train_only_sampled record_wall_time threads
 *   [data]       source(synthetic|idx) train_images train_labels test_images
 *                test_labels classes dim train_per_class test_per_class
 *                separation classes_per_client
 *   [fl]         K S T tau batch_size
 *   [opt]        lambda beta eta eta_p s s_prime momentum nu
 *                personalized_optimizer factor_optimizer (sgd|nesterov|adam)
 *   [model]      preset(dnn) target_cr ranks(comma list)
 *                layer = linear IN OUT ACT
 *                layer = conv HEIGHT WIDTH IN_CHANNELS WINDOW OUT_CHANNELS ACT
 *
 * `layer` may repeat; if absent the preset is used. Ranks come from `ranks`
 * if given, else from `target_cr` (default 2). Unknown sections or keys are
 * errors. Throws ConfigError with the line number and [section].key.
 */
SimConfig parse_config(const std::string& text);
SimConfig load_config(const std::string& path);

/// Fully resolved config text; parse_config(serialize_config(c)) == c.
std::string serialize_config(const SimConfig& config);

}  // namespace tdpfed

#endif  // TDPFED_CONFIG_HPP_
