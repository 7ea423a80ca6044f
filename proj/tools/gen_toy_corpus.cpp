// Generates the bundled synthetic corpus: seeded, deterministic records with
// shared word families across a recipe's title, ingredients, and
// instructions, so intra-recipe alignment is actually learnable. Paired
// records carry a random Gaussian image feature.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmrr/rng.hpp"

namespace {

const std::vector<std::string> kContent = {
    "almond",  "anchovy",  "apple",    "apricot", "asparagus", "avocado",  "bacon",    "banana",
    "barley",  "basil",    "bean",     "beef",    "beet",      "berry",    "brie",     "broccoli",
    "broth",   "butter",   "cabbage",  "caper",   "caramel",   "carrot",   "cashew",   "celery",
    "cheddar", "cherry",   "chicken",  "chili",   "chive",     "cilantro", "cinnamon", "clam",
    "clove",   "cocoa",    "coconut",  "cod",     "corn",      "crab",     "cream",    "cumin",
    "curry",   "date",     "dill",     "duck",    "eggplant",  "endive",   "fennel",   "feta",
    "fig",     "garlic",   "ginger",   "gnocchi", "gouda",     "grape",    "guava",    "haddock",
    "halibut", "ham",      "hazelnut", "honey",   "kale",      "lamb",     "leek",     "lemon",
    "lentil",  "lettuce",  "lime",     "lobster", "mango",     "maple",    "melon",    "millet",
    "mint",    "miso",     "mushroom", "mussel",  "mustard",   "noodle",   "nutmeg",   "oat",
    "octopus", "okra",     "olive",    "onion",   "orange",    "oregano",  "oyster",   "paprika",
    "parsley", "parsnip",  "peach",    "peanut",  "pear",      "pea",      "pecan",    "pepper",
    "pesto",   "pickle",   "pine",     "pineapple", "pistachio", "plum",   "polenta",  "pork",
    "potato",  "prawn",    "pumpkin",  "quinoa",  "radish",    "raisin",   "raspberry", "rhubarb",
    "rice",    "ricotta",  "rosemary", "saffron", "sage",      "salmon",   "salsa",    "sardine",
    "sausage", "scallion", "scallop",  "sesame",  "shallot",   "shrimp",   "spinach",  "squash",
    "squid",   "sriracha", "tahini",   "tamarind", "tarragon", "thyme",    "tofu",     "tomato",
    "trout",   "truffle",  "tuna",     "turkey",  "turmeric",  "turnip",   "vanilla",  "venison",
    "walnut",  "wasabi",   "watercress", "yam",   "yeast",     "yogurt",   "zucchini", "ziti"};

const std::vector<std::string> kQuantity = {"one", "two", "three", "half", "cup", "spoon", "pinch"};
const std::vector<std::string> kAdjective = {"fresh", "chopped", "diced", "dried", "warm", "ripe"};
const std::vector<std::string> kVerb = {"mix", "stir", "bake", "simmer", "whisk", "fold", "toast",
                                        "grill", "roast", "season"};
const std::vector<std::string> kStyle = {"salad", "stew", "soup", "bowl", "pie", "roast", "bake"};

std::string pick(xmrr::Rng& rng, const std::vector<std::string>& pool) {
    return pool[rng.next_below(pool.size())];
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"generate the bundled synthetic recipe corpus"};
    std::string out_path = "data/toy.jsonl";
    std::size_t n_paired = 64, n_text = 192, image_dim = 32;
    std::uint64_t seed = 7;
    app.add_option("--out", out_path);
    app.add_option("--paired", n_paired);
    app.add_option("--text", n_text);
    app.add_option("--image-dim", image_dim);
    app.add_option("--seed", seed);
    CLI11_PARSE(app, argc, argv);

    xmrr::Rng rng(seed);
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) {
        std::fprintf(stderr, "cannot write %s\n", out_path.c_str());
        return 1;
    }

    for (std::size_t i = 0; i < n_paired + n_text; ++i) {
        // six distinct content words per recipe, shared across components
        std::vector<std::string> sig;
        while (sig.size() < 6) {
            std::string w = pick(rng, kContent);
            bool dup = false;
            for (const auto& s : sig) dup = dup || s == w;
            if (!dup) sig.push_back(std::move(w));
        }

        nlohmann::json j;
        char id[16];
        std::snprintf(id, sizeof(id), "toy-%04zu", i);
        j["id"] = id;
        j["title"] = sig[0] + " " + sig[1] + " " + pick(rng, kStyle);
        j["ingredients"] = {pick(rng, kQuantity) + " " + pick(rng, kAdjective) + " " + sig[0] + " " + sig[2],
                            pick(rng, kQuantity) + " " + sig[3] + " " + sig[1],
                            pick(rng, kQuantity) + " " + pick(rng, kAdjective) + " " + sig[4]};
        j["instructions"] = {pick(rng, kVerb) + " the " + sig[2] + " with " + sig[5],
                             pick(rng, kVerb) + " " + sig[0] + " and " + sig[3] + " until done",
                             pick(rng, kVerb) + " the " + sig[4] + " and " + sig[5] + " gently",
                             "serve the " + sig[1] + " " + pick(rng, kStyle)};
        if (i < n_paired) {
            std::vector<double> feat(image_dim);
            for (auto& v : feat) v = rng.normal();
            j["image_feature"] = feat;
        }
        out << j.dump() << "\n";
    }
    std::fprintf(stdout, "wrote %zu records (%zu paired, %zu text-only) to %s\n", n_paired + n_text,
                 n_paired, n_text, out_path.c_str());
    return 0;
}
